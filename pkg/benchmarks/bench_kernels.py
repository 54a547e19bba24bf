"""Compiled vs numpy kernels: timings and agreement.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from pamlab import _fallback, kernels
from pamlab.covariance import SpaceCovariance
from pamlab.feynman_kac import PairEvaluator, time_weights, trapezoid_weights
from pamlab.covariance import TimeCovariance

try:
    from pamlab import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    g = np.random.default_rng(0)
    u = 1 + g.random((256, 2048))
    xi = 0.1 * g.standard_normal((256, 2048))
    yield "heat_step 256x2048 (exp)", (lambda m: m.heat_step(u, xi, 0.25, 1.0, 0.01, 0))
    yield "heat_step 256x2048 (euler)", (lambda m: m.heat_step(u, xi, 0.25, 1.0, 0.01, 1))

    n = 32
    X = np.ascontiguousarray(np.cumsum(0.1 * g.standard_normal((256, 3, n, 1)), axis=2))
    W = time_weights(TimeCovariance.fractional(0.4), n, 1.0 / n)
    for name, space, eps in [("riesz 0.5", SpaceCovariance.riesz(0.5), 0.01),
                             ("smooth", SpaceCovariance.smooth(1.0, 0.5), 0.0)]:
        args = PairEvaluator(space, eps).args()
        yield (f"pair_double_time {name} S=256 m=3 n=32",
               (lambda m, a=args: m.pair_double_time(X, W, *a)))

    n = 800
    Y = np.ascontiguousarray(np.cumsum(0.05 * g.standard_normal((256, 3, n, 1)), axis=2))
    w = trapezoid_weights(n - 1, 1.0 / (n - 1))
    args = PairEvaluator(SpaceCovariance.dirac(), 0.002).args()
    yield "pair_equal_time dirac S=256 m=3 n=800", (lambda m: m.pair_equal_time(Y, w, *args))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    print(f"default backend: {kernels.backend()}")
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'case':44s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, fn in cases():
        tp, ref = best_of(lambda: fn(_fallback), a.repeat)
        if _kernels is None:
            print(f"{name:44s} {tp:10.4f}")
            continue
        tc, out = best_of(lambda: fn(_kernels), a.repeat)
        err = np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-300))
        print(f"{name:44s} {tp:10.4f} {tc:11.4f} {tp / tc:8.1f} {err:13.2e}")


if __name__ == "__main__":
    main()
