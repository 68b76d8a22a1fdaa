"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Numba paths are warmed up before timing so JIT compilation does not skew
the comparison; each cell reports the best of N repeats.
"""

import argparse
import time

import numpy as np

from marglik._kernels import _numpy as numpy_backend

try:
    from marglik._kernels import _numba as numba_backend
except ImportError:
    numba_backend = None

BACKENDS = [("numpy", numpy_backend)] + ([("numba", numba_backend)] if numba_backend else [])


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_prequential(repeats):
    print("\nprequential_gaussians (one-step predictive sweep)")
    print(f"{'n':>6} {'d':>4} " + " ".join(f"{name:>10}" for name, _ in BACKENDS) + "   speedup")
    rng = np.random.default_rng(0)
    for n, d in ((64, 4), (256, 8), (1024, 16), (2048, 32)):
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        times = []
        for _, mod in BACKENDS:
            mod.prequential_gaussians(X, y, 1.0, 0.5)  # warmup (JIT + cache touch)
            times.append(best_of(lambda m=mod: m.prequential_gaussians(X, y, 1.0, 0.5), repeats))
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(f"{n:>6} {d:>4} " + " ".join(f"{t * 1e3:>9.2f}ms" for t in times) + f"   {ratio:6.1f}x")


def bench_ridge_paths(repeats):
    print("\nridge_prefix_paths (closed-form trajectory batch)")
    print(f"{'n':>6} {'k':>6} {'d':>4} " + " ".join(f"{name:>10}" for name, _ in BACKENDS) + "   speedup")
    rng = np.random.default_rng(1)
    for n, k, d in ((32, 128, 4), (32, 2000, 8), (128, 512, 8), (256, 256, 16)):
        X = rng.standard_normal((n, d))
        Ytil = rng.standard_normal((n, k))
        Theta0 = rng.standard_normal((k, d))
        times = []
        for _, mod in BACKENDS:
            mod.ridge_prefix_paths(X, Ytil, Theta0, 0.7)
            times.append(best_of(lambda m=mod: m.ridge_prefix_paths(X, Ytil, Theta0, 0.7), repeats))
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(f"{n:>6} {k:>6} {d:>4} " + " ".join(f"{t * 1e3:>9.2f}ms" for t in times) + f"   {ratio:6.1f}x")


def bench_chol_update(repeats):
    print("\nchol_rank1_update (single rank-1 factor update)")
    print(f"{'d':>6} " + " ".join(f"{name:>10}" for name, _ in BACKENDS) + "   speedup")
    rng = np.random.default_rng(2)
    for d in (8, 32, 128):
        A = rng.standard_normal((d, d))
        A = A @ A.T + d * np.eye(d)
        L0 = np.linalg.cholesky(A)
        x0 = rng.standard_normal(d)
        times = []
        for _, mod in BACKENDS:
            mod.chol_rank1_update(L0.copy(), x0.copy())

            def run(m=mod):
                for _ in range(1000):
                    m.chol_rank1_update(L0.copy(), x0.copy())

            times.append(best_of(run, repeats))
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(f"{d:>6} " + " ".join(f"{t * 1e3:>9.2f}ms" for t in times) + f"   {ratio:6.1f}x  (per 1000 updates)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    names = ", ".join(name for name, _ in BACKENDS)
    print(f"backends: {names}")
    if numba_backend is None:
        print("numba not importable; timing the numpy fallback only")
    bench_prequential(args.repeats)
    bench_ridge_paths(args.repeats)
    bench_chol_update(args.repeats)


if __name__ == "__main__":
    main()
