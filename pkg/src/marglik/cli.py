"""Experiment runner: evidence estimation and model-selection sweeps.

Each task builds a grid of candidate models over a dataset, computes the
exact evidence plus the sampling estimators for every candidate, and
writes ``results.csv`` (one row per model/estimator), ``results.json``
(rows plus config echo and agreement summaries), and a per-model
``per_point/<model_id>.csv`` with the prequential contribution of every
data point. Identical config and seed reproduce the CSV byte for byte;
only the metadata block of the JSON carries the timestamp.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from . import __version__
from .blr import BlrModel, Dataset, sequential_log_evidence
from .datasets import (
    FeatureSelectionConfig,
    RffConfig,
    filter_binary,
    gen_feature_selection,
    gen_prior_variance_task,
    load_mnist_idx,
    prefix_features,
    rff_embed,
)
from .ensemble import selection_consistency
from .estimators import exact_report, l_hat, l_hat_k, l_hat_s, sample_posterior_predictions, sotl_report
from .gaussians import FactorizationError
from .ntk import NtkSpec, gp_log_evidence, gp_sequential_evidence, mc_l_estimate_gp, ntk_gram
from .sto import GdConfig, run_trajectories

__all__ = ["ExperimentConfig", "ResultRow", "ResultTable", "run", "compare_rankings", "main"]

TASKS = ("evidence", "select-features", "select-prior", "select-rff", "ensemble", "ntk-compare", "gen-data")
ESTIMATOR_KINDS = ("l_hat", "l_hat_k", "l_hat_s", "sotl")
BUDGET_LIMIT = 10**8


class ConfigError(ValueError):
    """Bad task configuration; maps to exit code 2."""


class NumericFailure(RuntimeError):
    """Numeric breakdown during a task; maps to exit code 3."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int = 0
    k: int = 100
    replicates: int = 10
    estimators: tuple = ("l_hat", "l_hat_k", "l_hat_s")
    output_dir: str = "results"
    jobs: int = 1
    force: bool = False
    mnist_dir: str | None = None
    data_path: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unrecognized task {self.task!r}; choose from {TASKS}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        bad = [e for e in self.estimators if e not in ESTIMATOR_KINDS]
        if bad:
            raise ConfigError(f"unknown estimator kinds {bad}; choose from {ESTIMATOR_KINDS}")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be a JSON object")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seed": int(self.seed),
            "k": int(self.k),
            "replicates": int(self.replicates),
            "estimators": list(self.estimators),
            "output_dir": self.output_dir,
            "jobs": int(self.jobs),
            "force": bool(self.force),
            "mnist_dir": self.mnist_dir,
            "data_path": self.data_path,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "task" not in d:
            raise ConfigError("config must name a task")
        d = dict(d)
        if "estimators" in d:
            d["estimators"] = tuple(d["estimators"])
        return cls(**d)


@dataclass(frozen=True)
class ResultRow:
    model_id: str
    estimator: str
    mean: float
    stderr: float | None
    k: int
    seed: int

    def to_csv_line(self) -> str:
        stderr = "" if self.stderr is None or not np.isfinite(self.stderr) else repr(float(self.stderr))
        return f"{self.model_id},{self.estimator},{float(self.mean)!r},{stderr},{self.k},{self.seed}"

    def to_dict(self) -> dict:
        stderr = self.stderr
        if stderr is not None and not np.isfinite(stderr):
            stderr = None
        return {
            "model_id": self.model_id,
            "estimator": self.estimator,
            "mean": float(self.mean),
            "stderr": None if stderr is None else float(stderr),
            "k": int(self.k),
            "seed": int(self.seed),
        }


@dataclass
class ResultTable:
    rows: list
    metadata: dict
    per_point: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["model_id,estimator,mean,stderr,k,seed"]
        lines.extend(row.to_csv_line() for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "rows": [row.to_dict() for row in self.rows],
            "extras": self.extras,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "results.csv"), "w") as fh:
            fh.write(self.to_csv())
        with open(os.path.join(out_dir, "results.json"), "w") as fh:
            fh.write(self.to_json())
        if self.per_point:
            pp_dir = os.path.join(out_dir, "per_point")
            os.makedirs(pp_dir, exist_ok=True)
            for model_id, contribs in self.per_point.items():
                fname = re.sub(r"[^-A-Za-z0-9_.=]", "_", model_id) + ".csv"
                with open(os.path.join(pp_dir, fname), "w") as fh:
                    fh.write("i,contribution\n")
                    for i, c in enumerate(contribs, start=1):
                        fh.write(f"{i},{float(c)!r}\n")


def _replicate_seed(base_seed: int, replicate: int) -> int:
    # Shared across model cells on purpose: common random numbers cancel
    # sampling noise out of cross-model ranking comparisons while leaving
    # each model's estimator distribution untouched.
    return int(np.random.SeedSequence((base_seed, replicate)).generate_state(1)[0])


def _estimate_candidate(model: BlrModel, data: Dataset, config: ExperimentConfig):
    """Rows for one candidate: exact, sequential, and each sampled estimator."""
    sampler = config.params.get("sampler", "exact")
    if sampler not in ("exact", "sto"):
        raise ConfigError(f"unknown sampler {sampler!r}")
    try:
        exact = exact_report(model, data)
        seq = sequential_log_evidence(model, data)
        rows = [
            ResultRow(model.model_id, "exact", exact.value, 0.0, 0, config.seed),
            ResultRow(model.model_id, "sequential", seq.value, 0.0, 0, config.seed),
        ]
        values = {kind: [] for kind in config.estimators}
        single_stderr = {}
        for r in range(config.replicates):
            rep_seed = _replicate_seed(config.seed, r)
            if sampler == "sto":
                samples, records = run_trajectories(model, data, config.k, GdConfig(), rep_seed)
                sources = {
                    "l_hat": lambda: l_hat(samples, data, model.noise_variance, model.model_id),
                    "l_hat_k": lambda: l_hat_k(samples, data, model.noise_variance, model.model_id),
                    "l_hat_s": lambda: l_hat_s(samples, data, model.noise_variance, model_id=model.model_id),
                    "sotl": lambda: sotl_report(records[0], model.noise_variance, data.n, model.model_id),
                }
            else:
                rng = np.random.default_rng(np.random.SeedSequence((rep_seed, 0)))
                noisy_rng = np.random.default_rng(np.random.SeedSequence((rep_seed, 1)))
                F = sample_posterior_predictions(model, data, config.k, rng)
                Fn = None
                if "l_hat_s" in config.estimators:
                    Fn = sample_posterior_predictions(model, data, config.k, noisy_rng, include_noise=True)
                sources = {
                    "l_hat": lambda: l_hat(F, data, model.noise_variance, model.model_id, seed=rep_seed),
                    "l_hat_k": lambda: l_hat_k(F, data, model.noise_variance, model.model_id, seed=rep_seed),
                    "l_hat_s": lambda: l_hat_s(
                        Fn, data, model.noise_variance, predictions_include_noise=True,
                        model_id=model.model_id, seed=rep_seed,
                    ),
                    "sotl": None,
                }
            for kind in config.estimators:
                maker = sources.get(kind)
                if maker is None:
                    raise ConfigError(f"estimator {kind!r} requires sampler='sto'")
                report = maker()
                values[kind].append(report.value)
                single_stderr[kind] = report.stderr
        for kind in config.estimators:
            vals = np.asarray(values[kind])
            if config.replicates >= 2:
                stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
            else:
                stderr = single_stderr[kind]
            rows.append(ResultRow(model.model_id, kind, float(vals.mean()), stderr, config.k, config.seed))
        return rows, seq.per_point
    except (FactorizationError, np.linalg.LinAlgError, FloatingPointError) as err:
        raise NumericFailure(f"model {model.model_id}: {err}") from err


def _run_candidates(candidates, config: ExperimentConfig):
    """Evaluate all (model, dataset) cells, in a thread pool when jobs > 1."""
    indexed = list(enumerate(candidates))

    def work(item):
        idx, (model, data) = item
        return idx, _estimate_candidate(model, data, config)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(work, indexed))
    else:
        results = [work(item) for item in indexed]
    results.sort(key=lambda pair: pair[0])
    rows, per_point = [], {}
    for idx, (cand_rows, contribs) in results:
        rows.extend(cand_rows)
        per_point[candidates[idx][0].model_id] = contribs
    return rows, per_point


def compare_rankings(table: ResultTable) -> dict:
    """Per-estimator arg-max and Spearman correlation against exact evidence."""
    by_est = {}
    model_order = []
    for row in table.rows:
        by_est.setdefault(row.estimator, {})[row.model_id] = row.mean
        if row.model_id not in model_order:
            model_order.append(row.model_id)
    if "exact" not in by_est:
        raise ValueError("no exact evidence rows to rank against")
    if len(model_order) < 2 or len(by_est) < 2:
        raise ValueError("need at least two models and two estimators")
    exact_vals = np.array([by_est["exact"][m] for m in model_order])
    exact_argmax = model_order[int(np.argmax(exact_vals))]
    summary = {"exact_argmax": exact_argmax, "estimators": {}}
    for est, vals in by_est.items():
        if est == "exact":
            continue
        if set(vals) != set(model_order):
            raise ValueError(f"estimator {est} is missing models")
        v = np.array([vals[m] for m in model_order])
        argmax = model_order[int(np.argmax(v))]
        if np.allclose(v, v[0]) or np.allclose(exact_vals, exact_vals[0]):
            rho = 1.0 if np.allclose(v, v[0]) and np.allclose(exact_vals, exact_vals[0]) else float("nan")
        else:
            rho = float(scipy.stats.spearmanr(exact_vals, v).statistic)
        summary["estimators"][est] = {
            "argmax": argmax,
            "agrees": argmax == exact_argmax,
            "spearman": rho,
        }
    return summary


def _budget_guard(config: ExperimentConfig, n_models: int, n_points: int) -> None:
    cost = n_models * config.replicates * config.k * max(n_points, 1)
    print(f"estimated cost: {n_models} models x {config.replicates} replicates x "
          f"k={config.k} x n={n_points} = {cost:.3g} scalar posterior solves")
    if cost > BUDGET_LIMIT and not config.force:
        raise ConfigError(
            f"estimated cost {cost:.3g} exceeds the {BUDGET_LIMIT:.0e} budget; rerun with --force"
        )


def _load_dataset(config: ExperimentConfig) -> Dataset:
    if config.data_path is None:
        raise ConfigError("this task needs --data pointing at a dataset CSV")
    try:
        return Dataset.from_csv(config.data_path)
    except OSError as err:
        raise ConfigError(f"cannot read dataset: {err}") from err


def _candidates_for(config: ExperimentConfig):
    """Build (model, dataset) candidates for the selection tasks."""
    p = config.params
    if config.task == "evidence":
        data = _load_dataset(config)
        model = BlrModel.isotropic(
            data.dim,
            float(p.get("prior_variance", 1.0)),
            float(p.get("noise_variance", 1.0)),
            feature_map=str(p.get("feature_map", "identity")),
            label=p.get("label"),
        )
        return [(model, data)]
    if config.task == "select-features":
        gen = FeatureSelectionConfig(
            n=int(p.get("n", 30)),
            d_total=int(p.get("d_total", 30)),
            k_informative=int(p.get("k_informative", 15)),
            sigma0=float(p.get("sigma0", 1.0)),
            sigma1=float(p.get("sigma1", 1.0)),
            seed=config.seed,
        )
        data = gen_feature_selection(gen)
        dims = [int(d) for d in p.get("dims", range(5, gen.d_total + 1))]
        # Well-specified calibration for this generator: optimal weights scale
        # like 1/(12+k) and the achievable residual sits near 0.15.
        pv = float(p.get("prior_variance", 0.002))
        nv = float(p.get("noise_variance", 0.15))
        return [
            (BlrModel.isotropic(d, pv, nv, feature_map=f"prefix-{d}", label=f"prefix-{d:02d}"),
             prefix_features(data, d))
            for d in dims
        ]
    if config.task == "select-prior":
        # Coarse grid and sizable noise keep the evidence optimum and the
        # KL-penalized bound optimum in the same cell.
        grid = p.get("variance_grid", (1.0 / 256.0, 1.0 / 16.0, 1.0, 16.0, 256.0))
        data, models = gen_prior_variance_task(
            n=int(p.get("n", 300)),
            d=int(p.get("d", 8)),
            true_sigma=float(p.get("true_sigma", 1.0)),
            noise=float(p.get("noise", 2.5)),
            seed=config.seed,
            variance_grid=[float(v) for v in grid],
        )
        return [(m, data) for m in models]
    if config.task == "select-rff":
        X, y = _load_mnist_binary(config)
        subset = int(p.get("subset_n", 60))
        X, y = X[:subset], y[:subset]
        m = int(p.get("num_features", 32))
        freqs = [float(f) for f in p.get("frequencies", (0.003, 0.03, 0.3, 3.0))]
        pv = float(p.get("prior_variance", 1.0))
        nv = float(p.get("noise_variance", 0.1))
        rff_seed = int(np.random.SeedSequence((config.seed, 0xF)).generate_state(1)[0])
        out = []
        for freq in freqs:
            phi = rff_embed(X, RffConfig(m, freq, rff_seed))
            out.append(
                (BlrModel.isotropic(m, pv, nv, feature_map=f"rff-m{m}-f{freq:g}", label=f"rff-f={freq:g}"),
                 Dataset(phi, y))
            )
        return out
    raise ConfigError(f"no candidate grid for task {config.task}")


def _load_mnist_binary(config: ExperimentConfig):
    p = config.params
    if "images_path" in p and "labels_path" in p:
        images_path, labels_path = p["images_path"], p["labels_path"]
    elif config.mnist_dir is not None:
        images_path = os.path.join(config.mnist_dir, p.get("images_file", "train-images-idx3-ubyte"))
        labels_path = os.path.join(config.mnist_dir, p.get("labels_file", "train-labels-idx1-ubyte"))
    else:
        raise ConfigError("select-rff needs --mnist-dir or images_path/labels_path params")
    try:
        X, labels = load_mnist_idx(images_path, labels_path)
    except OSError as err:
        raise ConfigError(f"cannot read IDX files: {err}") from err
    return filter_binary(X, labels)


def _run_selection(config: ExperimentConfig) -> ResultTable:
    candidates = _candidates_for(config)
    _budget_guard(config, len(candidates), max(d.n for _, d in candidates))
    rows, per_point = _run_candidates(candidates, config)
    table = ResultTable(rows, {}, per_point)
    if len(candidates) >= 2:
        table.extras["rankings"] = compare_rankings(table)
    return table


def _run_ensemble(config: ExperimentConfig) -> ResultTable:
    base_task = config.params.get("base_task", "select-features")
    if base_task not in ("select-features", "select-prior", "select-rff"):
        raise ConfigError(f"ensemble base_task must be a selection task, got {base_task!r}")
    base_params = dict(config.params.get("base_params", {}))
    if base_task == "select-features" and "dims" not in base_params:
        base_params["dims"] = [5, 10, 15, 20, 25, 30]
    base_config = replace(config, task=base_task, params=base_params)
    candidates = _candidates_for(base_config)
    draws = int(config.params.get("draws", 200))
    _budget_guard(config, len(candidates), max(d.n for _, d in candidates))
    models = [m for m, _ in candidates]
    datasets = [d for _, d in candidates]
    try:
        report = selection_consistency(models, datasets, config.seed, draws=draws, k=config.k)
    except (FactorizationError, np.linalg.LinAlgError, FloatingPointError) as err:
        raise NumericFailure(f"ensemble weights: {err}") from err
    rows = []
    per_point = {}
    for j, (model, data) in enumerate(candidates):
        rows.append(ResultRow(model.model_id, "exact", float(report.evidence[j]), 0.0, 0, config.seed))
        rows.append(ResultRow(model.model_id, "l_hat", float(report.lhat_values[j]), None, config.k, config.seed))
        per_point[model.model_id] = sequential_log_evidence(model, data).per_point
    table = ResultTable(rows, {}, per_point)
    table.extras["selection"] = report.to_dict()
    table.extras["draws"] = draws
    return table


def _ntk_dataset(config: ExperimentConfig, specs):
    p = config.params
    n = int(p.get("n", 40))
    source = p.get("data", "gp")
    if source == "mnist":
        X, y = _load_mnist_binary(config)
        return X[:n], y[:n]
    if source != "gp":
        raise ConfigError(f"ntk-compare data must be 'gp' or 'mnist', got {source!r}")
    input_dim = int(p.get("input_dim", 5))
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xD)))
    X = rng.standard_normal((n, input_dim))
    spec = specs[int(p.get("data_spec_index", 0))]
    K = ntk_gram(spec, X)
    noise = float(p.get("noise_variance", 0.1))
    L = np.linalg.cholesky(K.gram + (K.jitter_applied + 1e-12) * np.eye(n))
    y = L @ rng.standard_normal(n) + np.sqrt(noise) * rng.standard_normal(n)
    return X, y


def _run_ntk_compare(config: ExperimentConfig) -> ResultTable:
    p = config.params
    depths = [int(d) for d in p.get("depths", (1, 2, 3))]
    bias_vars = [float(b) for b in p.get("bias_variances", (0.1,))]
    wv = float(p.get("weight_variance", 2.0))
    noise = float(p.get("noise_variance", 0.1))
    specs = [NtkSpec(depth, wv, bv) for depth in depths for bv in bias_vars]
    X, y = _ntk_dataset(config, specs)
    _budget_guard(config, len(specs), len(y))
    rows, per_point = [], {}
    for idx, spec in enumerate(specs):
        try:
            K = ntk_gram(spec, X)
            exact = gp_log_evidence(K, y, noise)
            seq = gp_sequential_evidence(K, y, noise, model_id=spec.model_id)
            vals = []
            for r in range(config.replicates):
                rep_seed = _replicate_seed(config.seed, r)
                vals.append(mc_l_estimate_gp(K, y, config.k, rep_seed, noise, model_id=spec.model_id).value)
            vals = np.asarray(vals)
            stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size >= 2 else None
        except (FactorizationError, np.linalg.LinAlgError, FloatingPointError) as err:
            raise NumericFailure(f"model {spec.model_id}: {err}") from err
        rows.append(ResultRow(spec.model_id, "exact", exact, 0.0, 0, config.seed))
        rows.append(ResultRow(spec.model_id, "sequential", seq.value, 0.0, 0, config.seed))
        rows.append(ResultRow(spec.model_id, "l_hat", float(vals.mean()), stderr, config.k, config.seed))
        per_point[spec.model_id] = seq.per_point
    table = ResultTable(rows, {}, per_point)
    if len(specs) >= 2:
        table.extras["rankings"] = compare_rankings(table)
    return table


def _run_gen_data(config: ExperimentConfig) -> ResultTable:
    p = config.params
    generator = p.get("generator", "feature-selection")
    os.makedirs(config.output_dir, exist_ok=True)
    out_path = os.path.join(config.output_dir, "dataset.csv")
    if generator == "feature-selection":
        gen = FeatureSelectionConfig(
            n=int(p.get("n", 30)),
            d_total=int(p.get("d_total", 30)),
            k_informative=int(p.get("k_informative", 15)),
            sigma0=float(p.get("sigma0", 1.0)),
            sigma1=float(p.get("sigma1", 1.0)),
            seed=config.seed,
        )
        data = gen_feature_selection(gen)
    elif generator == "prior-variance":
        data, _ = gen_prior_variance_task(
            n=int(p.get("n", 100)),
            d=int(p.get("d", 4)),
            true_sigma=float(p.get("true_sigma", 1.0)),
            noise=float(p.get("noise", 0.1)),
            seed=config.seed,
        )
    else:
        raise ConfigError(f"unknown generator {generator!r}")
    data.to_csv(out_path)
    print(f"wrote {data.n} x {data.dim} dataset to {out_path}")
    return ResultTable([], {}, {}, {"dataset_path": out_path, "n": data.n, "dim": data.dim})


def run(config: ExperimentConfig) -> ResultTable:
    """Execute the configured task and return its result table."""
    start = time.time()
    if config.task in ("evidence", "select-features", "select-prior", "select-rff"):
        table = _run_selection(config)
    elif config.task == "ensemble":
        table = _run_ensemble(config)
    elif config.task == "ntk-compare":
        table = _run_ntk_compare(config)
    elif config.task == "gen-data":
        table = _run_gen_data(config)
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ConfigError(f"unrecognized task {config.task!r}")
    table.metadata = {
        "config": config.to_dict(),
        "versions": {"marglik": __version__, "numpy": np.__version__},
        "wall_time_s": time.time() - start,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    return table


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marglik", description=__doc__)
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        tp = sub.add_parser(task)
        tp.add_argument("--config", help="JSON config file; flags override its fields")
        tp.add_argument("--seed", type=int)
        tp.add_argument("--k", type=int)
        tp.add_argument("--replicates", type=int)
        tp.add_argument("--out", dest="output_dir")
        tp.add_argument("--jobs", type=int)
        tp.add_argument("--estimators", help="comma-separated estimator kinds")
        tp.add_argument("--data", dest="data_path", help="dataset CSV (evidence task)")
        tp.add_argument("--mnist-dir", dest="mnist_dir", help="directory with IDX files")
        tp.add_argument("--force", action="store_true", default=None,
                        help="override the wall-time budget guard")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    payload: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot parse config {args.config}: {err}") from err
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object")
    payload["task"] = args.task
    for key in ("seed", "k", "replicates", "output_dir", "jobs", "data_path", "mnist_dir", "force"):
        value = getattr(args, key)
        if value is not None:
            payload[key] = value
    if args.estimators is not None:
        payload["estimators"] = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    return ExperimentConfig.from_dict(payload)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        table = run(config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericFailure as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    table.write(config.output_dir)
    print(f"wrote results to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
