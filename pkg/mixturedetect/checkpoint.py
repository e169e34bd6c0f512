"""
Checkpoint files

Layout (all integers little-endian):
    b'MDNC' | version u32
    config json length u32 | config json (utf-8, sorted keys)
    metadata json length u32 | metadata json
    array count u32
    per array: name length u16 | name | ndim u8 | dims u32 * ndim
    array data as float32 little-endian, in table order
"""


import json
import logging
import struct

import numpy as np

from .mderror import FormatError
from .network import Checkpoint, NetworkConfig, layer_shapes


# importorator
__all__ = ['MAGIC', 'FORMAT_VERSION', 'save', 'load']

logger = logging.getLogger(__name__)

MAGIC = b'MDNC'
FORMAT_VERSION = 1


def _json_bytes(value):
    return json.dumps(value, sort_keys=True, separators=(',', ':')).encode('utf-8')


def save(checkpoint, path):
    """
    Writes a checkpoint; identical checkpoints give identical bytes

    :param checkpoint: Checkpoint to write
    :param path: destination file
    """
    shapes = layer_shapes(checkpoint.config)
    config_bytes = _json_bytes(checkpoint.config.to_dict())
    meta_bytes = _json_bytes(checkpoint.metadata)

    parts = [MAGIC, struct.pack('<I', FORMAT_VERSION),
             struct.pack('<I', len(config_bytes)), config_bytes,
             struct.pack('<I', len(meta_bytes)), meta_bytes,
             struct.pack('<I', len(shapes))]
    for name, shape in shapes:
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack('<B', len(shape)) + struct.pack(f'<{len(shape)}I', *shape))
    for name, shape in shapes:
        array = np.asarray(checkpoint.weights[name], dtype='<f4')
        if array.shape != tuple(shape):
            raise FormatError(path, f'{name} has shape {array.shape}, expected {shape}')
        parts.append(array.tobytes(order='C'))

    with open(path, 'wb') as f:
        f.write(b''.join(parts))
    logger.debug('checkpoint written to %s', path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise FormatError(self.path, 'file is truncated')
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path):
    """
    Reads a checkpoint written by save

    :param path: checkpoint file
    :returns: Checkpoint
    :raises FormatError: on bad magic, unknown version, truncation or a
        shape table that does not match the stored config
    """
    with open(path, 'rb') as f:
        data = f.read()

    reader = _Reader(data, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError(path, 'not a checkpoint (bad magic)')
    version, = reader.unpack('<I')
    if version != FORMAT_VERSION:
        raise FormatError(path, f'unsupported format version {version}')

    try:
        config_len, = reader.unpack('<I')
        config = NetworkConfig.from_dict(json.loads(reader.take(config_len)))
        meta_len, = reader.unpack('<I')
        metadata = json.loads(reader.take(meta_len))
    except (ValueError, TypeError) as ex:
        raise FormatError(path, f'bad header: {ex}') from ex

    count, = reader.unpack('<I')
    table = []
    for _ in range(count):
        name_len, = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8', errors='replace')
        ndim, = reader.unpack('<B')
        table.append((name, tuple(reader.unpack(f'<{ndim}I'))))

    expected = [(name, tuple(shape)) for name, shape in layer_shapes(config)]
    if table != expected:
        raise FormatError(path, 'shape table does not match the stored config')

    weights = {}
    for name, shape in table:
        n_bytes = 4 * int(np.prod(shape))
        weights[name] = np.frombuffer(reader.take(n_bytes), dtype='<f4').reshape(shape).astype(np.float32)

    if reader.offset != len(data):
        raise FormatError(path, f'{len(data) - reader.offset} trailing bytes')

    return Checkpoint(config=config, weights=weights, format_version=version, metadata=metadata)
