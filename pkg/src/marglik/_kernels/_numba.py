"""Numba-jitted versions of the sequential-conditioning kernels.

Same algorithms and update schedule as ``_numpy.py``; fastmath stays off so
both backends agree to rounding. Compiled lazily on first call, cached on
disk.
"""

from __future__ import annotations

import numpy as np
from numba import njit

REFACTOR_EVERY = 64


@njit(cache=True)
def _chol_rank1_update(L, x):
    d = L.shape[0]
    for i in range(d):
        lii = L[i, i]
        r = np.hypot(lii, x[i])
        c = r / lii
        s = x[i] / lii
        L[i, i] = r
        for j in range(i + 1, d):
            L[j, i] = (L[j, i] + s * x[j]) / c
            x[j] = c * x[j] - s * L[j, i]


@njit(cache=True)
def _forward_solve(L, b, out):
    d = L.shape[0]
    for i in range(d):
        acc = b[i]
        for j in range(i):
            acc -= L[i, j] * out[j]
        out[i] = acc / L[i, i]


@njit(cache=True)
def _backward_solve(L, b, out):
    # Solves L' out = b for lower-triangular L.
    d = L.shape[0]
    for i in range(d - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, d):
            acc -= L[j, i] * out[j]
        out[i] = acc / L[i, i]


@njit(cache=True)
def _prequential_gaussians(X, y, prior_var, noise_var):
    n, d = X.shape
    P = np.eye(d) / prior_var
    L = np.linalg.cholesky(P)
    s = np.zeros(d)
    z = np.empty(d)
    w = np.empty(d)
    means = np.empty(n)
    lat_vars = np.empty(n)
    xbuf = np.empty(d)
    for i in range(n):
        xi = X[i]
        _forward_solve(L, xi, z)
        acc_v = 0.0
        acc_m = 0.0
        _forward_solve(L, s, w)
        for j in range(d):
            acc_v += z[j] * z[j]
            acc_m += z[j] * w[j]
        lat_vars[i] = acc_v
        means[i] = acc_m
        for a in range(d):
            for b in range(d):
                P[a, b] += xi[a] * xi[b] / noise_var
        if (i + 1) % REFACTOR_EVERY == 0:
            L = np.linalg.cholesky(P)
        else:
            for j in range(d):
                xbuf[j] = xi[j] / np.sqrt(noise_var)
            _chol_rank1_update(L, xbuf)
        for j in range(d):
            s[j] += xi[j] * y[i] / noise_var
    return means, lat_vars


@njit(cache=True)
def _ridge_prefix_paths(X, Ytil, Theta0, lam):
    n, d = X.shape
    k = Theta0.shape[0]
    A = lam * np.eye(d)
    L = np.linalg.cholesky(A)
    B = np.empty((d, k))
    for j in range(k):
        for a in range(d):
            B[a, j] = lam * Theta0[j, a]
    thetas = np.empty((n, k, d))
    thetas[0] = Theta0
    xbuf = np.empty(d)
    w = np.empty(d)
    t = np.empty(d)
    for i in range(1, n):
        xi = X[i - 1]
        for a in range(d):
            for b in range(d):
                A[a, b] += xi[a] * xi[b]
            B[a] += xi[a] * Ytil[i - 1]
        if i % REFACTOR_EVERY == 0:
            L = np.linalg.cholesky(A)
        else:
            for j in range(d):
                xbuf[j] = xi[j]
            _chol_rank1_update(L, xbuf)
        for j in range(k):
            _forward_solve(L, B[:, j].copy(), w)
            _backward_solve(L, w, t)
            for a in range(d):
                thetas[i, j, a] = t[a]
    return thetas


def chol_rank1_update(L, x):
    _chol_rank1_update(L, x)


def prequential_gaussians(X, y, prior_var, noise_var):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    return _prequential_gaussians(X, y, float(prior_var), float(noise_var))


def ridge_prefix_paths(X, Ytil, Theta0, lam):
    X = np.ascontiguousarray(X, dtype=float)
    Ytil = np.ascontiguousarray(Ytil, dtype=float)
    Theta0 = np.ascontiguousarray(Theta0, dtype=float)
    return _ridge_prefix_paths(X, Ytil, Theta0, float(lam))
