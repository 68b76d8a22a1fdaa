"""Backend dispatch for the hot sequential kernels.

Two interchangeable implementations exist: a numba-jitted one (default when
numba imports cleanly) and a pure-numpy one. Selection happens via the
``MARGLIK_NUMBA`` environment variable at import time ("0" forces numpy,
"1" requires numba, unset picks numba when available) and can be changed at
runtime with :func:`set_backend` — used by the test suite and the kernel
benchmark to compare both paths.
"""

from __future__ import annotations

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}
try:
    from . import _numba

    _BACKENDS["numba"] = _numba
except ImportError:  # pragma: no cover - numba is an install-time choice
    _numba = None

REFACTOR_EVERY = _numpy.REFACTOR_EVERY


def _default_backend() -> str:
    flag = os.environ.get("MARGLIK_NUMBA", "").strip()
    if flag == "0":
        return "numpy"
    if flag == "1":
        if "numba" not in _BACKENDS:
            raise ImportError("MARGLIK_NUMBA=1 but numba is not importable")
        return "numba"
    return "numba" if "numba" in _BACKENDS else "numpy"


_active = _default_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    _active = name


def chol_rank1_update(L, x):
    return _BACKENDS[_active].chol_rank1_update(L, x)


def prequential_gaussians(X, y, prior_var, noise_var):
    return _BACKENDS[_active].prequential_gaussians(X, y, prior_var, noise_var)


def ridge_prefix_paths(X, Ytil, Theta0, lam):
    return _BACKENDS[_active].ridge_prefix_paths(X, Ytil, Theta0, lam)
