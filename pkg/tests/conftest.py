import numpy as np
import pytest

from stratlasso.dataset import StratifiedDataset, get_rng


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run the Monte Carlo checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: Monte Carlo checks, run with --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def orthonormal_block(n_k, p, seed):
    """n_k×p block with X'X / n_k = I"""
    q, _ = np.linalg.qr(get_rng(seed).standard_normal((n_k, p)))
    return np.sqrt(n_k) * q


@pytest.fixture
def make_orthonormal():
    def _make(K, n_k, p, seed=0, beta=None, sigma=1.0):
        beta = np.zeros((K, p)) if beta is None else np.asarray(beta, dtype=np.float64)
        strata = list()
        for k in range(K):
            x = orthonormal_block(n_k, p, seed * 1000 + k)
            y = x @ beta[k] + sigma * get_rng(seed, 99, k).standard_normal(n_k)
            strata.append((x, y))
        return StratifiedDataset(strata)
    return _make


@pytest.fixture
def small_dataset():
    """K=3 strata of sizes 8, 10, 12 with p=4 Gaussian predictors"""
    beta = np.array([[1.0, 0.0, 2.0, 0.0],
                     [1.0, 0.0, 0.0, 0.0],
                     [1.5, 0.5, 2.0, 0.0]])
    strata = list()
    for k, n_k in enumerate((8, 10, 12)):
        x = get_rng(7, 0, k).standard_normal((n_k, 4))
        y = x @ beta[k] + 0.3 * get_rng(7, 1, k).standard_normal(n_k)
        strata.append((x, y))
    return StratifiedDataset(strata), beta
