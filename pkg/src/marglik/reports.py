"""Evidence report container shared by the oracle and estimator modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvidenceReport", "REPORT_KINDS"]

REPORT_KINDS = ("exact", "sequential", "l_hat", "l_hat_k", "l_hat_s", "sotl")


@dataclass(frozen=True)
class EvidenceReport:
    """Total (log) evidence value plus its per-point decomposition.

    ``value`` always equals ``per_point.sum()`` up to 1e-10; ``k`` is the
    number of parameter samples consumed (0 for the exact kinds).
    ``stderr`` is a Monte Carlo standard error where one is well defined
    (0.0 for exact kinds, None for single-trajectory reports).
    ``degenerate_points`` flags indices where a variance floor kicked in.
    """

    kind: str
    value: float
    per_point: np.ndarray
    k: int
    seed: int | None
    model_id: str
    stderr: float | None = None
    degenerate_points: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in REPORT_KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")
        pp = np.atleast_1d(np.asarray(self.per_point, dtype=float))
        object.__setattr__(self, "per_point", pp)
        if self.kind in ("exact", "sequential") and self.k != 0:
            raise ValueError(f"kind {self.kind} must have k = 0")
        total = float(pp.sum())
        if np.isfinite(total) and abs(total - self.value) > 1e-10 * max(1.0, abs(total)):
            raise ValueError(f"value {self.value} inconsistent with per-point sum {total}")

    def to_dict(self) -> dict:
        stderr = self.stderr
        if stderr is not None and not np.isfinite(stderr):
            stderr = None
        out = {
            "kind": self.kind,
            "value": float(self.value),
            "per_point": [float(v) for v in self.per_point],
            "k": int(self.k),
            "seed": None if self.seed is None else int(self.seed),
            "model_id": self.model_id,
            "stderr": None if stderr is None else float(stderr),
        }
        if self.degenerate_points:
            out["degenerate_points"] = [int(i) for i in self.degenerate_points]
        return out

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict())
