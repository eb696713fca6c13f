import itertools

import numpy as np
import pytest
from sklearn.datasets import make_blobs


def correlated_data(m, n, seed):
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(n, n))
    scale = rng.uniform(0.5, 20.0, size=n)
    shift = rng.uniform(-50, 50, size=n)
    return (rng.normal(size=(m, n)) @ mix + 0.3 * rng.uniform(size=(m, n))) * scale + shift


def blobs(seed=0, m=600, n=6, centers=3, std=2.0):
    return make_blobs(n_samples=m, n_features=n, centers=centers, cluster_std=std, random_state=seed)


def factorial_sources(n=3, repeats=8):
    """Independent +-1 sources on a full factorial design (sample-exact independence)."""
    base = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
    return np.vstack([base] * repeats)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_50x4():
    return correlated_data(50, 4, seed=7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
