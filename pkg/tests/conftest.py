import numpy as np
import pytest

from mixturedetect.mixture import head_width


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run end-to-end training tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def random_raw(rng, K):
    """Raw head vector with means inside the patch and sigmas in [0.1, 0.5]."""
    raw = np.empty(head_width(K))
    raw[:K] = rng.normal(size=K)
    raw[K:3 * K] = rng.uniform(0.0, 1.0, size=2 * K)
    raw[3 * K:4 * K] = np.log(rng.uniform(0.1, 0.5, size=K))
    raw[4 * K] = rng.normal()
    return raw


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
