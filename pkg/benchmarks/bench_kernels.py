"""Compare the compiled kernel backend against the numpy fallback.

Runs each of the four hot kernels on a representative workload with
both implementations and reports best-of-N wall times plus the max
absolute disagreement (which should sit at a few ulps).

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 5] [--scale 1.0]
"""
import argparse
import time

import numpy as np

from extremis._kernels import _pure
from extremis.rng import substream

try:
    from extremis._kernels import _core
except ImportError:
    _core = None


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _workloads(scale):
    rng = substream(7, "bench")
    n = int(500_000 * scale)
    work = {}

    u = rng.uniform(0.0, 30.0, n)
    sig = rng.uniform(0.1, 5.0, n)
    unif = rng.random((6, n))
    med = (25.0, 11.0, 6.0, 0.4)
    sc = (2.0, 12.0, 7.0, 0.6)
    work["ev_max_scan"] = (
        lambda impl: impl.ev_max_scan(u, sig, unif, med, sc, 0.0, 3.0, 25.0,
                                      -np.inf, -np.inf),
        lambda out: out[0],
    )

    m, nu, ns = 2, 256, 256
    mu_tab = rng.normal(10.0, 1.0, (m, nu, ns))
    sd_tab = rng.uniform(0.1, 0.5, (m, nu, ns))
    z = rng.standard_normal((m, n))
    unif1 = rng.random((1, n))
    work["gp_grid_scan"] = (
        lambda impl: impl.gp_grid_scan(u, sig, z, unif1, 0.0, 30.0 / (nu - 1),
                                       0.0, 5.0 / (ns - 1), mu_tab, sd_tab,
                                       False, 3.0, 25.0, 1e-6),
        lambda out: out[0],
    )

    zt = rng.standard_normal(int(600_000 * scale))
    work["ar1_oscillator"] = (
        lambda impl: impl.ar1_oscillator(zt, 12.0, 1.5, 0.995, 0.15, 1.8,
                                         -0.81, 0.02, 25.0, 11.0, 6.0, 3.0,
                                         25.0),
        lambda out: out[1],
    )

    steps = int(20_000 * scale)
    p, na, nx = 12, 2, 4
    exponents = rng.integers(0, 3, (p, na + nx))
    coeffs = rng.normal(0.0, 0.02, p)
    ar_lags = np.array([1, 2], dtype=np.intp)
    exo = rng.normal(0.0, 0.5, (steps, nx))
    y0 = np.zeros(steps)
    y0[:2] = 0.1

    def run_narx(impl):
        yhat = y0.copy()
        return impl.narx_free_run(exponents, coeffs, ar_lags, exo, yhat, 2)

    work["narx_free_run"] = (run_narx, lambda out: out)
    return work


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0,
                    help="workload size multiplier")
    args = ap.parse_args()

    if _core is None:
        print("compiled backend not available; timing the numpy fallback only")
    print(f"{'kernel':<16} {'pure':>10} {'compiled':>10} {'speedup':>8}  max|diff|")
    for name, (call, pick) in _workloads(args.scale).items():
        t_pure, out_pure = _best_of(lambda: call(_pure), args.repeats)
        if _core is None:
            print(f"{name:<16} {t_pure * 1e3:>8.1f}ms {'-':>10} {'-':>8}")
            continue
        t_core, out_core = _best_of(lambda: call(_core), args.repeats)
        diff = float(np.max(np.abs(pick(out_pure) - pick(out_core))))
        print(f"{name:<16} {t_pure * 1e3:>8.1f}ms {t_core * 1e3:>8.1f}ms "
              f"{t_pure / t_core:>7.2f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
