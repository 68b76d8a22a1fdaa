"""Evidence lower-bound estimators over posterior-sample grids.

Three estimators consume an (n, k) grid of sampled predictions, one per
(point, sample): the naive per-sample average of log likelihoods, the
tighter log-of-averaged-likelihoods variant, and the Gaussian plug-in that
fits a moment-matched predictive from the sampled values. All emit
:class:`EvidenceReport` with per-point contributions and a Monte Carlo
standard error.

Samples can come from :class:`~marglik.sto.TrajectorySamples` or from
:func:`sample_posterior_predictions`, which draws exact posterior function
values f_i = theta' x_i directly from their scalar predictive law — the
same distribution as projecting exact weight samples, at a fraction of the
cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blr import BlrModel, Dataset, exact_log_evidence, one_step_predictive_params, posterior_step_kl
from .gaussians import LOG_2PI
from .reports import EvidenceReport
from .sto import SumLossRecord, TrajectorySamples

__all__ = [
    "EvidenceReport",
    "l_hat",
    "l_hat_k",
    "l_hat_s",
    "sotl_report",
    "prop1_bias_check",
    "Prop1Check",
    "sample_posterior_predictions",
    "exact_report",
]

VARIANCE_FLOOR = 1e-12


def _predictions_and_targets(samples, data):
    """Normalize inputs to an (n, k) prediction grid, targets, default seed."""
    if isinstance(samples, TrajectorySamples):
        if not isinstance(data, Dataset):
            raise TypeError("trajectory samples need a Dataset for features")
        return samples.predictions(data.features), data.targets, int(samples.master_seed)
    F = np.asarray(samples, dtype=float)
    if F.ndim != 2:
        raise ValueError("prediction grid must be (n, k)")
    y = data.targets if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if y.shape != (F.shape[0],):
        raise ValueError(f"targets shape {y.shape} does not match grid {F.shape}")
    return F, y, None


def _log_lik_grid(F, y, noise_variance):
    if noise_variance <= 0.0:
        raise ValueError("noise_variance must be positive")
    resid = y[:, None] - F
    return -0.5 * resid * resid / noise_variance - 0.5 * (LOG_2PI + np.log(noise_variance))


def l_hat(samples, data, noise_variance, model_id="", seed=None) -> EvidenceReport:
    """Per-sample-averaged log likelihoods: sum_i (1/k) sum_j log p(y_i | f_ij).

    Unbiased for the KL-shifted evidence bound; the standard error comes
    from the spread of per-sample totals, which stays valid when samples
    are dependent across points (as trajectory samples are).
    """
    F, y, default_seed = _predictions_and_targets(samples, data)
    ll = _log_lik_grid(F, y, noise_variance)
    k = ll.shape[1]
    per_point = ll.mean(axis=1)
    totals = ll.sum(axis=0)
    stderr = float(np.std(totals, ddof=1) / np.sqrt(k)) if k >= 2 else None
    return EvidenceReport(
        kind="l_hat",
        value=float(per_point.sum()),
        per_point=per_point,
        k=k,
        seed=seed if seed is not None else default_seed,
        model_id=model_id,
        stderr=stderr,
    )


def _row_log_mean_exp(ll):
    m = ll.max(axis=1, keepdims=True)
    return (m + np.log(np.mean(np.exp(ll - m), axis=1, keepdims=True)))[:, 0]


def l_hat_k(samples, data, noise_variance, model_id="", seed=None) -> EvidenceReport:
    """Log of per-point likelihood averages: sum_i log (1/k) sum_j p(y_i | f_ij).

    Tighter than :func:`l_hat` for k > 1 and identical to it (bit-exactly)
    at k = 1. The standard error is a first-order delta-method
    approximation treating points as independent.
    """
    F, y, default_seed = _predictions_and_targets(samples, data)
    ll = _log_lik_grid(F, y, noise_variance)
    k = ll.shape[1]
    per_point = _row_log_mean_exp(ll)
    if k >= 2:
        m = ll.max(axis=1, keepdims=True)
        w = np.exp(ll - m)
        mean_w = w.mean(axis=1)
        var_w = w.var(axis=1, ddof=1)
        var_total = float(np.sum(var_w / (k * mean_w**2)))
        stderr = float(np.sqrt(var_total))
    else:
        stderr = None
    return EvidenceReport(
        kind="l_hat_k",
        value=float(per_point.sum()),
        per_point=per_point,
        k=k,
        seed=seed if seed is not None else default_seed,
        model_id=model_id,
        stderr=stderr,
    )


def _noise_rng_for(master_seed) -> np.random.Generator:
    # Distinct stream from the per-sample seeds split off the same master.
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), 1)))


def l_hat_s(
    samples,
    data,
    noise_variance,
    noise_rng=None,
    predictions_include_noise=False,
    model_id="",
    seed=None,
) -> EvidenceReport:
    """Gaussian plug-in estimator from moment-matched predictive draws.

    Each point's predictive draws are f_ij plus fresh observation noise
    (seed-split from the trajectory's master seed unless ``noise_rng`` is
    given, or skipped entirely when the grid already contains noisy
    predictive draws). The per-point contribution is the log density of
    y_i under N(sample mean, unbiased sample variance); collapsed sample
    variances are floored at 1e-12 and flagged in the report.
    """
    F, y, default_seed = _predictions_and_targets(samples, data)
    k = F.shape[1]
    if k < 2:
        raise ValueError("l_hat_s needs k >= 2 for the unbiased variance")
    if not predictions_include_noise:
        if noise_rng is None:
            if default_seed is None:
                raise ValueError("need noise_rng (or trajectory samples) for noisy predictive draws")
            noise_rng = _noise_rng_for(default_seed)
        F = F + np.sqrt(noise_variance) * noise_rng.standard_normal(F.shape)
    mu = F.mean(axis=1)
    var = F.var(axis=1, ddof=1)
    degenerate = tuple(int(i) for i in np.nonzero(var < VARIANCE_FLOOR)[0])
    var = np.maximum(var, VARIANCE_FLOOR)
    resid = y - mu
    per_point = -0.5 * (resid * resid / var + LOG_2PI + np.log(var))
    d_mu = resid / var
    d_var = (resid * resid / var - 1.0) / (2.0 * var)
    var_total = float(np.sum(d_mu**2 * var / k + d_var**2 * 2.0 * var**2 / (k - 1)))
    return EvidenceReport(
        kind="l_hat_s",
        value=float(per_point.sum()),
        per_point=per_point,
        k=k,
        seed=seed if seed is not None else default_seed,
        model_id=model_id,
        stderr=float(np.sqrt(var_total)),
        degenerate_points=degenerate,
    )


def sotl_report(record: SumLossRecord, noise_variance, n, model_id="", seed=None) -> EvidenceReport:
    """Accumulated-training-loss view of a single trajectory.

    value = -total - (n/2) ln(2 pi noise_variance); algebraically identical
    to :func:`l_hat` on the same trajectory.
    """
    per_point = -np.asarray(record.per_point, dtype=float) - 0.5 * (LOG_2PI + np.log(noise_variance))
    if per_point.size != n:
        raise ValueError(f"record has {per_point.size} points, expected {n}")
    return EvidenceReport(
        kind="sotl",
        value=float(per_point.sum()),
        per_point=per_point,
        k=1,
        seed=seed,
        model_id=model_id,
        stderr=None,
    )


def sample_posterior_predictions(
    model: BlrModel, data: Dataset, k: int, rng: np.random.Generator, include_noise: bool = False
) -> np.ndarray:
    """Exact posterior function values f_ij ~ N(m_i, v_i) as an (n, k) grid.

    m_i, v_i are the one-step-ahead predictive parameters given the points
    before i, so column j is distributed exactly like projecting a fresh
    weight sample from each prefix posterior onto its feature vector.
    ``include_noise`` adds the observation variance, turning function
    values into predictive draws.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    means, lat_vars = one_step_predictive_params(model, data)
    var = lat_vars + (model.noise_variance if include_noise else 0.0)
    sd = np.sqrt(np.maximum(var, 0.0))
    return means[:, None] + sd[:, None] * rng.standard_normal((data.n, k))


def exact_report(model: BlrModel, data: Dataset) -> EvidenceReport:
    """Closed-form evidence with its chain-rule per-point decomposition.

    The contributions come from the Cholesky factor of the marginal
    covariance, so they sum to the closed-form total by construction.
    """
    from .gaussians import jittered_cholesky

    X, y = data.features, data.targets
    cov = model.prior_variance * (X @ X.T) + model.noise_variance * np.eye(data.n)
    L = jittered_cholesky(cov)
    z = np.linalg.solve(L, y - X @ model.prior_mean)
    per_point = -0.5 * z * z - np.log(np.diag(L)) - 0.5 * LOG_2PI
    return EvidenceReport(
        kind="exact",
        value=float(per_point.sum()),
        per_point=per_point,
        k=0,
        seed=None,
        model_id=model.model_id,
        stderr=0.0,
    )


@dataclass(frozen=True)
class Prop1Check:
    """Both sides of the KL-bias identity with the Monte Carlo error of the left."""

    lhs: float
    lhs_stderr: float
    rhs: float
    exact: float
    kl_sum: float

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs


def prop1_bias_check(model: BlrModel, data: Dataset, k: int, seed: int) -> Prop1Check:
    """Monte Carlo bound value vs. exact evidence minus summed step KLs."""
    rng = np.random.default_rng(seed)
    F = sample_posterior_predictions(model, data, k, rng, include_noise=False)
    report = l_hat(F, data, model.noise_variance, model_id=model.model_id, seed=seed)
    exact = exact_log_evidence(model, data)
    kl_sum = float(sum(posterior_step_kl(model, data, i) for i in range(1, data.n + 1)))
    stderr = report.stderr if report.stderr is not None else float("nan")
    return Prop1Check(lhs=report.value, lhs_stderr=stderr, rhs=exact - kl_sum, exact=exact, kl_sum=kl_sum)
