"""Pure-numpy implementations of the hot sequential-conditioning kernels.

Reference implementations for the numba backend in ``_numba.py``; both
follow the same update schedule (rank-1 Cholesky updates with a full
refactorization every ``REFACTOR_EVERY`` points) so their outputs agree to
rounding.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

REFACTOR_EVERY = 64


def chol_rank1_update(L: np.ndarray, x: np.ndarray) -> None:
    """In-place update of lower-triangular L so that L L' += x x'.

    ``x`` is destroyed. Standard hyperbolic-rotation sweep, O(d^2).
    """
    d = L.shape[0]
    for i in range(d):
        lii = L[i, i]
        r = np.hypot(lii, x[i])
        c = r / lii
        s = x[i] / lii
        L[i, i] = r
        if i + 1 < d:
            L[i + 1 :, i] = (L[i + 1 :, i] + s * x[i + 1 :]) / c
            x[i + 1 :] = c * x[i + 1 :] - s * L[i + 1 :, i]


def prequential_gaussians(X, y, prior_var, noise_var):
    """One-step-ahead predictive mean and latent variance for each point.

    Conditioning uses the precision form P_i = I/prior_var + X'X/noise_var
    over the prefix before point i, with a zero prior mean (callers shift
    targets for nonzero prior means). Returns (means, latent_vars) where
    latent_vars[i] = x_i' P_i^{-1} x_i excludes observation noise.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, d = X.shape
    P = np.eye(d) / prior_var
    L = np.linalg.cholesky(P)
    s = np.zeros(d)
    means = np.empty(n)
    lat_vars = np.empty(n)
    for i in range(n):
        xi = X[i]
        z = scipy.linalg.solve_triangular(L, xi, lower=True)
        lat_vars[i] = z @ z
        w = scipy.linalg.solve_triangular(L, s, lower=True)
        means[i] = z @ w
        P += np.outer(xi, xi) / noise_var
        if (i + 1) % REFACTOR_EVERY == 0:
            L = np.linalg.cholesky(P)
        else:
            chol_rank1_update(L, xi / np.sqrt(noise_var))
        s += xi * (y[i] / noise_var)
    return means, lat_vars


def ridge_prefix_paths(X, Ytil, Theta0, lam):
    """Closed-form regularized least-squares paths for k parallel samples.

    For sample j, thetas[i, j] is argmin ||Ytil[:i, j] - X[:i] theta||^2
    + lam ||theta - Theta0[j]||^2, i.e. the parameter in effect when point
    i is scored (thetas[0] = Theta0, the prior draws). The d x d factor of
    X[:i]'X[:i] + lam I is shared across samples per prefix.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Ytil = np.ascontiguousarray(Ytil, dtype=float)
    Theta0 = np.ascontiguousarray(Theta0, dtype=float)
    n, d = X.shape
    k = Theta0.shape[0]
    A = lam * np.eye(d)
    L = np.linalg.cholesky(A)
    B = lam * Theta0.T.copy()  # (d, k) right-hand sides
    thetas = np.empty((n, k, d))
    thetas[0] = Theta0
    for i in range(1, n):
        xi = X[i - 1]
        A += np.outer(xi, xi)
        B += np.outer(xi, Ytil[i - 1])
        if i % REFACTOR_EVERY == 0:
            L = np.linalg.cholesky(A)
        else:
            chol_rank1_update(L, xi.copy())
        W = scipy.linalg.solve_triangular(L, B, lower=True)
        thetas[i] = scipy.linalg.solve_triangular(L.T, W, lower=False).T
    return thetas
