"""Sample-then-optimize trajectory generation.

Each trajectory starts from a prior draw theta0 and a one-shot target
perturbation ytil = y + eps, then walks the data order: the loss of the
current parameter on point i is recorded *before* optimizing the
regularized least-squares objective on the prefix up to and including i.
With the closed-form solver the parameter scoring point i is an exact
posterior sample given the points before i, which is what makes the
accumulated losses an evidence lower bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .blr import BlrModel, Dataset

__all__ = [
    "GdConfig",
    "TrajectorySamples",
    "SumLossRecord",
    "perturb_targets",
    "regularized_loss",
    "solve_prefix",
    "run_trajectories",
]


@dataclass(frozen=True)
class GdConfig:
    """Optimizer settings for the per-prefix ridge solves.

    ``closed_form`` solves the normal equations exactly. ``gradient_descent``
    iterates full-batch steps; ``step_size=None`` picks 1/(L + lam) with L a
    power-iteration estimate of ||X'X||. Stability demands
    step_size * eigmax(X'X + lam I) < 2, which is checked against each
    prefix actually solved.
    """

    mode: str = "closed_form"
    step_size: float | None = None
    max_iters: int = 10_000
    grad_tolerance: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("closed_form", "gradient_descent"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tolerance <= 0.0:
            raise ValueError("grad_tolerance must be positive")


@dataclass(frozen=True)
class TrajectorySamples:
    """Parameter grid theta[i, j] = sample j in effect when point i is scored.

    Row 0 holds the prior draws. ``seeds`` are the per-sample RNG seeds split
    from ``master_seed`` by sample index, so samples can be generated in any
    order (or in parallel) with identical results.
    """

    theta: np.ndarray
    seeds: np.ndarray
    converged: np.ndarray
    master_seed: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        conv = np.asarray(self.converged, dtype=bool)
        if theta.ndim != 3:
            raise ValueError("theta must be (n, k, d)")
        if conv.shape != theta.shape[:2]:
            raise ValueError("converged must be (n, k)")
        if np.asarray(self.seeds).shape != (theta.shape[1],):
            raise ValueError("seeds must have one entry per sample")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "converged", conv)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def k(self) -> int:
        return self.theta.shape[1]

    def predictions(self, features: np.ndarray) -> np.ndarray:
        """Function values theta[i, j]' x_i as an (n, k) matrix."""
        X = np.asarray(features, dtype=float)
        if X.shape != (self.n, self.theta.shape[2]):
            raise ValueError(f"features shape {X.shape} does not match trajectories")
        return np.einsum("ikd,id->ik", self.theta, X)

    def to_json(self) -> str:
        return json.dumps(
            {
                "master_seed": int(self.master_seed),
                "seeds": [int(s) for s in self.seeds],
                "converged": self.converged.tolist(),
                "theta": self.theta.tolist(),
            }
        )

    def to_csv_long(self) -> str:
        """Long-format dump with header ``i,j,coordinate,value`` (1-based i, j)."""
        lines = ["i,j,coordinate,value"]
        n, k, d = self.theta.shape
        for i in range(n):
            for j in range(k):
                for c in range(d):
                    lines.append(f"{i + 1},{j + 1},{c + 1},{self.theta[i, j, c]!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SumLossRecord:
    """Per-point squared losses (theta_i' x_i - y_i)^2 / (2 sN^2) and their sum."""

    per_point: np.ndarray
    total: float

    def __post_init__(self):
        pp = np.asarray(self.per_point, dtype=float)
        if np.any(pp < 0.0):
            raise ValueError("losses must be nonnegative")
        if abs(pp.sum() - self.total) > 1e-12 * max(1.0, abs(self.total)):
            raise ValueError("total inconsistent with per-point losses")
        object.__setattr__(self, "per_point", pp)


def perturb_targets(y: np.ndarray, noise_variance: float, rng: np.random.Generator) -> np.ndarray:
    """y + eps with eps ~ N(0, noise_variance) i.i.d.; identity at zero variance."""
    if noise_variance < 0.0:
        raise ValueError("noise_variance must be nonnegative")
    y = np.asarray(y, dtype=float)
    if noise_variance == 0.0:
        return y.copy()
    return y + np.sqrt(noise_variance) * rng.standard_normal(y.shape)


def regularized_loss(theta, theta0, X, ytil, noise_variance, prior_variance) -> float:
    """||ytil - X theta||^2 + (noise_variance / prior_variance) ||theta - theta0||^2.

    The regularizer is anchored at the prior draw theta0; its weight is the
    noise-to-prior variance ratio, which is what makes the minimizer an
    exact posterior sample.
    """
    if prior_variance <= 0.0:
        raise ValueError("prior_variance must be positive")
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    X = np.asarray(X, dtype=float).reshape(-1, theta.size)
    ytil = np.asarray(ytil, dtype=float)
    if theta.shape != theta0.shape:
        raise ValueError("theta and theta0 must have matching shapes")
    if ytil.shape != (X.shape[0],):
        raise ValueError("targets do not match the prefix")
    resid = ytil - X @ theta
    lam = noise_variance / prior_variance
    diff = theta - theta0
    return float(resid @ resid + lam * (diff @ diff))


def _power_iteration_norm(X: np.ndarray, iters: int = 64) -> float:
    """Largest eigenvalue of X'X by power iteration with a fixed start vector."""
    d = X.shape[1]
    if X.shape[0] == 0 or d == 0:
        return 0.0
    v = np.full(d, 1.0 / np.sqrt(d))
    est = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        est = norm
    return float(est)


def _gd_step_size(X: np.ndarray, lam: float, cfg: GdConfig) -> float:
    if cfg.step_size is not None:
        return cfg.step_size
    return 1.0 / (_power_iteration_norm(X) + lam)


def solve_prefix(theta0, X, ytil, noise_variance, prior_variance, cfg: GdConfig, warm_start=None):
    """Minimize the regularized prefix loss; returns (theta_star, converged).

    closed_form solves (X'X + lam I) theta = X' ytil + lam theta0 directly.
    gradient_descent iterates from ``warm_start`` (default theta0) until the
    gradient norm drops below ``cfg.grad_tolerance`` or ``cfg.max_iters`` is
    hit; a loss increase over 10 consecutive iterations flags divergence and
    returns the current iterate non-converged.
    """
    theta0 = np.asarray(theta0, dtype=float)
    X = np.asarray(X, dtype=float).reshape(-1, theta0.size)
    ytil = np.asarray(ytil, dtype=float)
    if X.shape[0] == 0:
        return theta0.copy(), True
    lam = noise_variance / prior_variance
    A = X.T @ X + lam * np.eye(theta0.size)
    b = X.T @ ytil + lam * theta0
    if cfg.mode == "closed_form":
        return np.linalg.solve(A, b), True
    step = _gd_step_size(X, lam, cfg)
    eigmax = float(np.linalg.eigvalsh(A)[-1])
    if step * eigmax >= 2.0:
        raise ValueError(
            f"step_size {step:g} unstable for prefix of {X.shape[0]} points "
            f"(step * eigmax = {step * eigmax:g} >= 2)"
        )
    theta = theta0.copy() if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    prev_loss = regularized_loss(theta, theta0, X, ytil, noise_variance, prior_variance)
    increases = 0
    for _ in range(cfg.max_iters):
        grad = A @ theta - b
        if np.linalg.norm(grad) <= cfg.grad_tolerance:
            return theta, True
        theta -= step * grad
        loss = regularized_loss(theta, theta0, X, ytil, noise_variance, prior_variance)
        increases = increases + 1 if loss > prev_loss else 0
        if increases >= 10:
            return theta, False
        prev_loss = loss
    return theta, np.linalg.norm(A @ theta - b) <= cfg.grad_tolerance


def sample_seeds(master_seed: int, k: int) -> np.ndarray:
    """Per-sample integer seeds split deterministically from ``master_seed``."""
    return np.random.SeedSequence(master_seed).generate_state(k, dtype=np.uint64)


def _draw_initial(model: BlrModel, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    theta0 = model.prior_mean + np.sqrt(model.prior_variance) * rng.standard_normal(model.dim)
    eps = np.sqrt(model.noise_variance) * rng.standard_normal(n)
    return theta0, eps


def run_trajectories(model: BlrModel, data: Dataset, k: int, cfg: GdConfig, master_seed: int):
    """Run k independent sample-then-optimize trajectories over the data order.

    For each sample: draw theta0 from the prior and the target perturbation
    once (both from the sample's split seed), then for each point record the
    loss of the current parameter *before* optimizing on the prefix that
    includes it. Returns (TrajectorySamples, list of SumLossRecord).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if model.dim != data.dim:
        raise ValueError(f"model dim {model.dim} != data dim {data.dim}")
    n, d = data.n, data.dim
    seeds = sample_seeds(master_seed, k)
    theta0s = np.empty((k, d))
    ytils = np.empty((n, k))
    for j in range(k):
        theta0, eps = _draw_initial(model, n, seeds[j])
        theta0s[j] = theta0
        ytils[:, j] = data.targets + eps
    lam = model.noise_variance / model.prior_variance

    if cfg.mode == "closed_form":
        thetas = _kernels.ridge_prefix_paths(data.features, ytils, theta0s, lam)
        converged = np.ones((n, k), dtype=bool)
    else:
        thetas = np.empty((n, k, d))
        converged = np.ones((n, k), dtype=bool)
        for j in range(k):
            theta = theta0s[j]
            thetas[0, j] = theta
            for i in range(1, n):
                theta, ok = solve_prefix(
                    theta0s[j],
                    data.features[:i],
                    ytils[:i, j],
                    model.noise_variance,
                    model.prior_variance,
                    cfg,
                    warm_start=theta,
                )
                thetas[i, j] = theta
                converged[i, j] = ok

    samples = TrajectorySamples(thetas, seeds, converged, master_seed)
    preds = samples.predictions(data.features)
    losses = (preds - data.targets[:, None]) ** 2 / (2.0 * model.noise_variance)
    records = [SumLossRecord(losses[:, j], float(losses[:, j].sum())) for j in range(k)]
    return samples, records
