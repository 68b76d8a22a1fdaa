import numpy as np
import pytest

from marglik import _kernels
from marglik._kernels import _numpy as np_backend

numba_backend = pytest.importorskip("marglik._kernels._numba")


@pytest.fixture
def backend_pair():
    return np_backend, numba_backend


def test_chol_rank1_update_matches_refactorization(rng, backend_pair):
    for backend in backend_pair:
        A = rng.standard_normal((5, 5))
        A = A @ A.T + 5 * np.eye(5)
        x = rng.standard_normal(5)
        L = np.linalg.cholesky(A)
        backend.chol_rank1_update(L, x.copy())
        expected = np.linalg.cholesky(A + np.outer(x, x))
        np.testing.assert_allclose(L, expected, rtol=1e-10)


def test_prequential_backends_agree(rng, backend_pair):
    X = rng.standard_normal((70, 4))  # crosses the refactorization boundary
    y = rng.standard_normal(70)
    m_np, v_np = np_backend.prequential_gaussians(X, y, 0.7, 0.3)
    m_nb, v_nb = numba_backend.prequential_gaussians(X, y, 0.7, 0.3)
    np.testing.assert_allclose(m_np, m_nb, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(v_np, v_nb, rtol=1e-12, atol=1e-12)


def test_prequential_matches_direct_solves(rng):
    X = rng.standard_normal((12, 3))
    y = rng.standard_normal(12)
    prior_var, noise_var = 2.0, 0.5
    means, lat = np_backend.prequential_gaussians(X, y, prior_var, noise_var)
    for i in range(12):
        P = np.eye(3) / prior_var + X[:i].T @ X[:i] / noise_var
        cov = np.linalg.inv(P)
        mu = cov @ (X[:i].T @ y[:i] / noise_var)
        assert means[i] == pytest.approx(X[i] @ mu, rel=1e-9, abs=1e-12)
        assert lat[i] == pytest.approx(X[i] @ cov @ X[i], rel=1e-9)


def test_ridge_paths_backends_agree(rng, backend_pair):
    X = rng.standard_normal((70, 3))
    Ytil = rng.standard_normal((70, 4))
    Theta0 = rng.standard_normal((4, 3))
    a = np_backend.ridge_prefix_paths(X, Ytil, Theta0, 0.8)
    b = numba_backend.ridge_prefix_paths(X, Ytil, Theta0, 0.8)
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def test_ridge_paths_match_closed_form(rng):
    X = rng.standard_normal((6, 2))
    Ytil = rng.standard_normal((6, 3))
    Theta0 = rng.standard_normal((3, 2))
    lam = 1.3
    thetas = np_backend.ridge_prefix_paths(X, Ytil, Theta0, lam)
    np.testing.assert_array_equal(thetas[0], Theta0)
    for i in range(1, 6):
        A = X[:i].T @ X[:i] + lam * np.eye(2)
        for j in range(3):
            expected = np.linalg.solve(A, X[:i].T @ Ytil[:i, j] + lam * Theta0[j])
            np.testing.assert_allclose(thetas[i, j], expected, rtol=1e-10)


def test_backend_switching():
    before = _kernels.active_backend()
    assert before in _kernels.available_backends()
    try:
        _kernels.set_backend("numpy")
        assert _kernels.active_backend() == "numpy"
        _kernels.set_backend("numba")
        assert _kernels.active_backend() == "numba"
        with pytest.raises(ValueError):
            _kernels.set_backend("fortran")
    finally:
        _kernels.set_backend(before)
    assert _kernels.active_backend() == before
