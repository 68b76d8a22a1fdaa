"""Linear model-combination experiments.

A design matrix collects one column of sampled predictions per candidate
model; a least-squares regressor on it ranks models, and under the
orthogonal-error construction the optimal weights have the closed form
w_i proportional to 1/||eps_i||^2. Concurrent sampling (each prediction
drawn from the posterior given only earlier points) is the regime where
the top-weighted model provably matches the evidence-bound ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blr import BlrModel, Dataset, condition, exact_log_evidence, one_step_predictive_params
from .estimators import l_hat, sample_posterior_predictions

__all__ = [
    "DesignMatrix",
    "WeightReport",
    "SelectionReport",
    "build_design",
    "least_squares_weights",
    "synth_lemma_instance",
    "closed_form_lemma_weights",
    "selection_consistency",
]

SAMPLING_MODES = ("concurrent", "posterior", "prior")


@dataclass(frozen=True)
class DesignMatrix:
    """n x m matrix of sampled predictions, column j from model j."""

    phi: np.ndarray
    sampling_mode: str
    seed: int | None = None
    _rebuild: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        if not np.all(np.isfinite(phi)):
            raise ValueError("design matrix contains NaN or Inf")
        if self.sampling_mode not in SAMPLING_MODES + ("synthetic",):
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        object.__setattr__(self, "phi", phi)

    @property
    def n_models(self) -> int:
        return self.phi.shape[1]

    def rebuild(self, rng: np.random.Generator) -> "DesignMatrix":
        """Fresh independent draw of the same design distribution."""
        if self._rebuild is None:
            raise ValueError("this design matrix carries no rebuild recipe")
        return self._rebuild(rng)


@dataclass(frozen=True)
class WeightReport:
    """Least-squares combination weights and the |w|-ranking they induce."""

    weights: np.ndarray
    draws_averaged: int
    ranking: tuple[int, ...]
    sampling_mode: str | None = None
    seed: int | None = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ranking", tuple(int(i) for i in self.ranking))

    @property
    def top_model(self) -> int:
        return self.ranking[0]

    def to_dict(self, agreement: bool | None = None) -> dict:
        out = {
            "weights": [float(v) for v in self.weights],
            "ranking": list(self.ranking),
            "sampling_mode": self.sampling_mode,
            "draws_averaged": int(self.draws_averaged),
            "seed": None if self.seed is None else int(self.seed),
        }
        if agreement is not None:
            out["agreement"] = bool(agreement)
        return out


def _rank_by_magnitude(weights: np.ndarray) -> tuple[int, ...]:
    # Descending |w|; ties broken by lowest model index (stable sort on -|w|).
    order = np.argsort(-np.abs(weights), kind="stable")
    return tuple(int(i) for i in order)


def _per_model_datasets(models, data):
    if isinstance(data, Dataset):
        datasets = [data] * len(models)
    else:
        datasets = list(data)
        if len(datasets) != len(models):
            raise ValueError("need one dataset per model")
    for m, d in zip(models, datasets):
        if m.dim != d.dim:
            raise ValueError(f"model {m.model_id} dim {m.dim} != data dim {d.dim}")
    return datasets


def _column_predictive_params(model: BlrModel, dataset: Dataset, mode: str):
    """Predictive mean and full variance per point for one design column."""
    if mode == "concurrent":
        means, lat = one_step_predictive_params(model, dataset)
    elif mode == "posterior":
        g = condition(model, dataset, dataset.n).weight_posterior
        means = dataset.features @ g.mean
        lat = np.einsum("ij,jk,ik->i", dataset.features, g.covariance, dataset.features)
    elif mode == "prior":
        means = dataset.features @ model.prior_mean
        lat = model.prior_variance * np.einsum("ij,ij->i", dataset.features, dataset.features)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return means, lat + model.noise_variance


def build_design(models, data, mode: str, rng) -> DesignMatrix:
    """Sample an n x m design of model predictions under the given regime.

    concurrent draws prediction i from the posterior given points before i;
    posterior conditions on the full dataset; prior conditions on nothing.
    ``data`` is a shared Dataset or one per model (models with different
    feature maps get their transformed datasets). ``rng`` may be an int
    seed, recorded on the result, or a Generator.
    """
    models = list(models)
    if not models:
        raise ValueError("empty model list")
    datasets = _per_model_datasets(models, data)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    params = [_column_predictive_params(m, d, mode) for m, d in zip(models, datasets)]
    n = datasets[0].n

    def draw(generator: np.random.Generator) -> np.ndarray:
        phi = np.empty((n, len(models)))
        for j, (means, variances) in enumerate(params):
            phi[:, j] = means + np.sqrt(variances) * generator.standard_normal(n)
        return phi

    def rebuild(generator: np.random.Generator) -> DesignMatrix:
        return DesignMatrix(draw(generator), mode, None, rebuild)

    generator = np.random.default_rng(rng)
    return DesignMatrix(draw(generator), mode, seed, rebuild)


def _solve_normal_equations(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(G + 1e-10 * np.eye(G.shape[0]))  # ridge fallback
    w = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, w)


def least_squares_weights(design: DesignMatrix, y, draws: int = 1, rng=None, solver: str = "direct") -> WeightReport:
    """Weights minimizing the expected squared error of the combination.

    The expectation over design randomness is approximated by averaging
    the sufficient statistics (phi'phi, phi'y) over ``draws`` independent
    rebuilds (the given design counts as the first). ``solver`` is
    "direct" for the normal-equation solve or "gradient_descent" for an
    iterative route to the same optimum.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    y = np.asarray(y, dtype=float)
    phi = design.phi
    if y.shape != (phi.shape[0],):
        raise ValueError("targets do not match design rows")
    G = phi.T @ phi
    b = phi.T @ y
    if draws > 1:
        if rng is None:
            raise ValueError("draws > 1 needs an rng for rebuilds")
        generator = np.random.default_rng(rng)
        for _ in range(draws - 1):
            phi_r = design.rebuild(generator).phi
            G += phi_r.T @ phi_r
            b += phi_r.T @ y
    G /= draws
    b /= draws
    if solver == "direct":
        w = _solve_normal_equations(G, b)
    elif solver == "gradient_descent":
        eigmax = float(np.linalg.eigvalsh(G)[-1])
        step = 1.0 / eigmax if eigmax > 0 else 1.0
        w = np.zeros(G.shape[0])
        for _ in range(100_000):
            grad = G @ w - b
            if np.linalg.norm(grad) <= 1e-12 * max(1.0, np.linalg.norm(b)):
                break
            w -= step * grad
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return WeightReport(w, draws, _rank_by_magnitude(w), design.sampling_mode, design.seed)


def closed_form_lemma_weights(alpha: float, sigmas) -> np.ndarray:
    """Closed-form optimal weights (alpha / sum sigma^-2) * sigma_i^-2.

    This is the sum-normalized direction of the least-squares solution on
    the orthogonal-error design: the raw solution is proportional to
    sigma_i^-2, and rescaling its sum to alpha gives exactly this vector.
    """
    inv = 1.0 / np.asarray(sigmas, dtype=float) ** 2
    return alpha * inv / inv.sum()


def synth_lemma_instance(alpha: float, sigmas, n: int, rng) -> tuple[DesignMatrix, np.ndarray]:
    """Deterministic orthogonal-error design: column j = alpha y + eps_j.

    y is a random direction scaled to norm sqrt(n); the eps_j are mutually
    orthogonal, orthogonal to y, with ||eps_j||^2 = sigma_j^2 n. The
    orthogonality is exact, so a single draw already realizes the
    expectation in the weight optimum.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    m = sigmas.size
    if m > n - 1:
        raise ValueError(f"{m} orthogonal error directions need n >= {m + 1} points")
    if np.any(sigmas <= 0.0):
        raise ValueError("sigmas must be positive")
    generator = np.random.default_rng(rng)
    y = generator.standard_normal(n)
    y *= np.sqrt(n) / np.linalg.norm(y)
    raw = generator.standard_normal((n, m))
    raw -= np.outer(y, y @ raw) / (y @ y)
    q, _ = np.linalg.qr(raw)
    phi = alpha * y[:, None] + q[:, :m] * (sigmas * np.sqrt(n))
    design = DesignMatrix(phi, "synthetic", rng if isinstance(rng, (int, np.integer)) else None,
                          lambda _generator: DesignMatrix(phi, "synthetic"))
    return design, y


@dataclass(frozen=True)
class SelectionReport:
    """Arg-max agreement between combination weights and evidence rankings."""

    model_ids: tuple[str, ...]
    evidence: np.ndarray
    evidence_argmax: int
    lhat_values: np.ndarray
    lhat_argmax: int
    weights: dict
    weight_argmax: dict
    agreement: dict
    lhat_agrees: bool
    column_target_alignment: dict
    offdiag_orthogonality: dict

    def to_dict(self) -> dict:
        return {
            "model_ids": list(self.model_ids),
            "evidence": [float(v) for v in self.evidence],
            "evidence_argmax": int(self.evidence_argmax),
            "lhat_values": [float(v) for v in self.lhat_values],
            "lhat_argmax": int(self.lhat_argmax),
            "lhat_agrees": bool(self.lhat_agrees),
            "weights": {m: [float(v) for v in w] for m, w in self.weights.items()},
            "weight_argmax": {m: int(v) for m, v in self.weight_argmax.items()},
            "agreement": {m: bool(v) for m, v in self.agreement.items()},
            "column_target_alignment": {m: [float(v) for v in a] for m, a in self.column_target_alignment.items()},
            "offdiag_orthogonality": {m: float(v) for m, v in self.offdiag_orthogonality.items()},
        }


def selection_consistency(models, data, seed: int, draws: int = 200, k: int = 500) -> SelectionReport:
    """Compare weight-based rankings against evidence rankings for all modes.

    Weights come from ``draws``-averaged least squares per sampling mode;
    the evidence-bound column uses k exact posterior prediction samples.
    Arg-max ties break toward the lowest model index. The report also
    carries the measured alignment/orthogonality diagnostics behind the
    weight-ranking guarantee.
    """
    models = list(models)
    if len(models) < 2:
        raise ValueError("need at least two models")
    datasets = _per_model_datasets(models, data)
    y = datasets[0].targets
    evidence = np.array([exact_log_evidence(m, d) for m, d in zip(models, datasets)])
    children = np.random.SeedSequence(seed).spawn(len(models))
    lhat_vals = np.empty(len(models))
    for j, (m, d) in enumerate(zip(models, datasets)):
        rng = np.random.default_rng(children[j])
        F = sample_posterior_predictions(m, d, k, rng)
        lhat_vals[j] = l_hat(F, d, m.noise_variance, model_id=m.model_id).value
    weights, weight_argmax, agreement = {}, {}, {}
    alignments, orthogonality = {}, {}
    ev_arg = int(np.argmax(evidence))
    for mode in SAMPLING_MODES:
        mode_seed = np.random.SeedSequence((seed, SAMPLING_MODES.index(mode)))
        generator = np.random.default_rng(mode_seed)
        design = build_design(models, datasets, mode, generator)
        report = least_squares_weights(design, y, draws=draws, rng=generator)
        weights[mode] = report.weights
        weight_argmax[mode] = int(np.argmax(report.weights))
        agreement[mode] = weight_argmax[mode] == ev_arg
        phi = design.phi
        align = phi.T @ y
        proj = phi - np.outer(y, y @ phi) / (y @ y)
        cross = proj.T @ proj
        off = cross - np.diag(np.diag(cross))
        scale = max(float(np.abs(np.diag(cross)).max()), 1e-300)
        alignments[mode] = align
        orthogonality[mode] = float(np.abs(off).max() / scale)
    return SelectionReport(
        model_ids=tuple(m.model_id for m in models),
        evidence=evidence,
        evidence_argmax=ev_arg,
        lhat_values=lhat_vals,
        lhat_argmax=int(np.argmax(lhat_vals)),
        weights=weights,
        weight_argmax=weight_argmax,
        agreement=agreement,
        lhat_agrees=int(np.argmax(lhat_vals)) == ev_arg,
        column_target_alignment=alignments,
        offdiag_orthogonality=orthogonality,
    )
