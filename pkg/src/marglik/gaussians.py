"""Shared Gaussian numerics: densities, KL divergence, SPD factorization, sampling.

Everything here works in log space; probabilities are only exponentiated
inside :func:`log_mean_exp`. Covariance factorizations go through
:func:`jittered_cholesky`, which applies a trace-scaled diagonal jitter in
escalating steps rather than failing on marginally indefinite matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "Gaussian1D",
    "GaussianND",
    "FactorizationError",
    "jittered_cholesky",
    "log_density_1d",
    "kl_gaussian_nd",
    "log_mean_exp",
    "sample_mvn",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# Base jitter is 1e-9 * mean diagonal, escalated x10 at most three times.
_JITTER_SCALE = 1e-9
_JITTER_TRIES = 3


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after escalating jitter."""


@dataclass(frozen=True)
class Gaussian1D:
    """Scalar Gaussian with strictly positive variance."""

    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.variance):
            raise ValueError("Gaussian1D parameters must be finite")
        if self.variance <= 0.0:
            raise ValueError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class GaussianND:
    """Multivariate Gaussian given by mean vector and SPD covariance.

    The covariance must be symmetric to 1e-10 relative tolerance; it is
    symmetrized on construction so downstream factorizations see an exactly
    symmetric matrix.
    """

    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {mean.size}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("GaussianND parameters must be finite")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise ValueError("covariance is not symmetric within tolerance")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", jittered_cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the (possibly jittered) covariance."""
        return self._chol


def jittered_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with escalating diagonal jitter.

    A bare factorization is attempted first. On failure, 1e-9 * (trace/d)
    is added to the diagonal and the attempt repeated, escalating the jitter
    x10 up to three times before raising :class:`FactorizationError`.
    Posterior covariances shrink toward singular as data accumulates, so
    the small-jitter retries are routine rather than exceptional.
    """
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    base = _JITTER_SCALE * max(np.trace(matrix) / d, np.finfo(float).tiny)
    eye = np.eye(d)
    jitter = base
    for _ in range(_JITTER_TRIES):
        try:
            return np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"Cholesky failed for {d}x{d} matrix after jitter up to {jitter / 10.0:.3e}"
    )


def log_density_1d(g: Gaussian1D, y: float) -> float:
    """Log density of a scalar Gaussian at ``y``.

    Returns -(y - mean)^2 / (2 variance) - 0.5 * ln(2 pi variance).
    """
    if g.variance <= 0.0:
        raise ValueError("variance must be positive")
    resid = y - g.mean
    return -0.5 * resid * resid / g.variance - 0.5 * (LOG_2PI + np.log(g.variance))


def kl_gaussian_nd(p: GaussianND, q: GaussianND) -> float:
    """KL(p || q) between Gaussians via Cholesky factors, never inverses.

    Uses the closed form
    0.5 * [tr(Sq^-1 Sp) + dmu' Sq^-1 dmu - d + ln det Sq - ln det Sp],
    with all solves done against the triangular factor of q's covariance.
    The result is clamped at zero to absorb rounding on identical inputs.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    lp, lq = p.chol, q.chol
    if not np.all(np.diag(lq) > 0.0):
        raise FactorizationError("q covariance is singular")
    # tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    m = scipy.linalg.solve_triangular(lq, lp, lower=True)
    trace_term = float(np.sum(m * m))
    z = scipy.linalg.solve_triangular(lq, q.mean - p.mean, lower=True)
    quad_term = float(z @ z)
    logdet_term = 2.0 * float(np.sum(np.log(np.diag(lq))) - np.sum(np.log(np.diag(lp))))
    return max(0.5 * (trace_term + quad_term - p.dim + logdet_term), 0.0)


def log_mean_exp(values) -> float:
    """Stable ln((1/k) sum exp(v_j)); exact for k = 1 and constant input."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("log_mean_exp of an empty sequence")
    if values.size == 1:
        return float(values.reshape(-1)[0])
    m = float(np.max(values))
    if not np.isfinite(m):
        return m  # all -inf (or a +inf/nan already present)
    return m + float(np.log(np.mean(np.exp(values - m))))


def sample_mvn(g: GaussianND, rng: np.random.Generator) -> np.ndarray:
    """Draw one sample via the lower-triangular factor; deterministic per seed."""
    return g.mean + g.chol @ rng.standard_normal(g.dim)
