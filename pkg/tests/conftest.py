import numpy as np
import pytest

from marglik import BlrModel, Dataset


def random_instance(rng, max_d=8, max_n=32, min_n=1):
    """Random BLR instance with log-uniform prior/noise variances in [1e-2, 1e2]."""
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(min_n, max_n + 1))
    s0 = float(10.0 ** rng.uniform(-2, 2))
    sN = float(10.0 ** rng.uniform(-2, 2))
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    model = BlrModel.isotropic(d, s0, sN)
    return model, Dataset(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scalar_instance():
    """d=1 instance whose first-point posterior is N(1.0, 0.5)."""
    model = BlrModel.isotropic(1, 1.0, 1.0)
    data = Dataset([[1.0], [0.5]], [2.0, 1.0])
    return model, data
