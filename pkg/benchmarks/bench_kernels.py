"""Compare the compiled and pure-Python resampling kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the comparison does not depend on
which one the package selected at import.  Outputs are checked for exact
equality before timing.
"""

import argparse
import time

import numpy as np

from smcfilter import _fallback

try:
    from smcfilter import _kernels
except ImportError:
    _kernels = None


def _inputs(R, N, n, seed=0):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(R))
    pi /= pi.sum()
    order = rng.permuted(np.tile(np.arange(R, dtype=np.int64), (n, 1)), axis=1)
    return pi, N, rng.random(n), order, rng.random((n, max(R - 1, 0)))


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'kernel':12s} {'R':>7s} {'N':>7s} {'draws':>6s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for R, N, n in ((10, 10, 10_000), (1000, 1000, 100), (100_000, 100_000, 2)):
        pi, N, u, order, ut = _inputs(R, N, n)
        cases = (
            ("systematic", lambda k: k.systematic_counts(pi, N, u, order)),
            ("tree", lambda k: k.tree_counts(pi, N, ut)),
        )
        for name, call in cases:
            py = _time(lambda: call(_fallback), args.repeat)
            if _kernels is None:
                print(f"{name:12s} {R:7d} {N:7d} {n:6d} {py:10.4f} {'-':>10s} {'-':>8s}")
                continue
            if not np.array_equal(call(_fallback), call(_kernels)):
                raise SystemExit(f"{name}: backends disagree at R={R}")
            cy = _time(lambda: call(_kernels), args.repeat)
            print(f"{name:12s} {R:7d} {N:7d} {n:6d} {py:10.4f} {cy:10.4f} {py / cy:8.1f}")


if __name__ == "__main__":
    main()
