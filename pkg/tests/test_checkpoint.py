import struct

import numpy as np
import pytest

from mixturedetect import checkpoint
from mixturedetect.mderror import FormatError
from mixturedetect.network import MDNetwork, NetworkConfig, forward


@pytest.fixture
def ckpt():
    config = NetworkConfig(K=2, patch_size=8, conv_blocks=((3, 3, 2),), fc_hidden=5, seed=4)
    return MDNetwork.initialize(config, 4).to_checkpoint({'final_loss': 1.5, 'epochs': 3})


def test_round_trip(tmp_path, ckpt):
    path = tmp_path / 'model.mdnc'
    checkpoint.save(ckpt, path)
    loaded = checkpoint.load(path)

    assert loaded.config == ckpt.config
    assert loaded.metadata == ckpt.metadata
    assert loaded.format_version == checkpoint.FORMAT_VERSION
    for name, value in ckpt.weights.items():
        assert loaded.weights[name].dtype == np.float32
        assert np.array_equal(loaded.weights[name], value)

    patch = np.random.default_rng(0).uniform(size=(8, 8))
    assert np.array_equal(forward(loaded, patch), forward(ckpt, patch))


def test_saving_is_byte_stable(tmp_path, ckpt):
    first, second = tmp_path / 'a.mdnc', tmp_path / 'b.mdnc'
    checkpoint.save(ckpt, first)
    checkpoint.save(checkpoint.load(first), second)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:4] == b'MDNC'


def test_truncated_file(tmp_path, ckpt):
    path = tmp_path / 'model.mdnc'
    checkpoint.save(ckpt, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError, match='truncated') as info:
        checkpoint.load(path)
    assert info.value.path == str(path)


def test_bad_magic(tmp_path, ckpt):
    path = tmp_path / 'model.mdnc'
    checkpoint.save(ckpt, path)
    path.write_bytes(b'XXXX' + path.read_bytes()[4:])
    with pytest.raises(FormatError, match='magic'):
        checkpoint.load(path)


def test_unknown_version(tmp_path, ckpt):
    path = tmp_path / 'model.mdnc'
    checkpoint.save(ckpt, path)
    data = path.read_bytes()
    path.write_bytes(data[:4] + struct.pack('<I', 99) + data[8:])
    with pytest.raises(FormatError, match='version 99'):
        checkpoint.load(path)


def test_trailing_bytes(tmp_path, ckpt):
    path = tmp_path / 'model.mdnc'
    checkpoint.save(ckpt, path)
    path.write_bytes(path.read_bytes() + b'\0\0')
    with pytest.raises(FormatError, match='trailing'):
        checkpoint.load(path)


def test_empty_file(tmp_path):
    path = tmp_path / 'empty.mdnc'
    path.write_bytes(b'')
    with pytest.raises(FormatError):
        checkpoint.load(path)
