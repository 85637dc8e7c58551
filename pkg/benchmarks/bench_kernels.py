"""Time the compiled kernels against the pure-Python fallback.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel gets the same
inputs on every backend and the outputs are checked for equality before
timing.
"""
import argparse
import timeit

import numpy as np

from geomclass import kernels
from geomclass.shallow import rbf_kernel


def dp_case(rng, n):
    a = np.linspace(0, 2 * np.pi, n)
    r = 1.0 + 0.05 * rng.normal(size=n)
    return (np.ascontiguousarray(np.c_[r * np.cos(a), r * np.sin(a)][: n // 2]), 0.01)


def gini_case(rng, n):
    X = rng.normal(size=(n, 20))
    y = rng.integers(0, 5, n).astype(np.int64)
    y[X[:, 3] > 0.5] = 1
    return (X, y, 5)


def smo_case(rng, n):
    X = rng.normal(size=(n, 4))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=n) > 0, 1.0, -1.0)
    Q = np.ascontiguousarray(y[:, None] * y[None, :] * rbf_kernel(X, X, 0.5))
    return (Q, y, 1.0, 1e-3, 10_000_000)


CASES = {"dp_keep": (dp_case, 20_000), "gini_best_split": (gini_case, 5_000), "smo_solve": (smo_case, 400)}


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply every problem size")
    args = parser.parse_args(argv)
    mods = kernels.backends()
    if len(mods) < 2:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<16} {'size':>7} " + " ".join(f"{m.BACKEND:>10}" for m in mods) + "   speedup")
    for name, (make, size) in CASES.items():
        n = max(10, int(size * args.scale))
        inputs = make(np.random.default_rng(0), n)
        outs = [getattr(m, name)(*inputs) for m in mods]
        if not all(same(outs[0], o) for o in outs[1:]):
            raise SystemExit(f"{name}: backends disagree")
        times = [min(timeit.repeat(lambda: getattr(m, name)(*inputs), number=1, repeat=args.repeat))
                 for m in mods]
        speedup = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{name:<16} {n:>7} " + " ".join(f"{t * 1e3:8.1f}ms" for t in times) + f"  {speedup}")


if __name__ == "__main__":
    main()
