"""Time the numba and numpy flavours of the hot kernels, plus one full fit.

``assign_scan`` feeds a decreasing curve, which forces the linear-scan
fallback instead of bisection.

    python3 benchmarks/bench_kernels.py [--n 1000000] [--K 50] [--repeat 3]

The full-fit timing runs in a subprocess per flavour so that
``QMED_DISABLE_NUMBA`` is honoured at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from qmed import _accel, kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


FIT_SNIPPET = """
import time
from qmed.oracle import OracleModel, simulate
from qmed.pipeline import EstimationConfig, fit_pipeline
t = simulate(OracleModel(), {n}, seed=0)
fit_pipeline(t, EstimationConfig(K={K}))  # warm-up (and numba compile)
t0 = time.perf_counter()
fit_pipeline(t, EstimationConfig(K={K}))
print(time.perf_counter() - t0)
"""


def full_fit(n, K, disable):
    env = dict(os.environ, QMED_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(n=n, K=K)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--skip-fit", action="store_true")
    a = ap.parse_args()

    if not _accel.HAVE_NUMBA:
        sys.exit("numba is not importable; cannot compare flavours")

    rng = np.random.default_rng(0)
    n, K = a.n, a.K
    m = rng.normal(size=n)
    x = rng.integers(0, 2, n)
    cells = np.array([[1.0, 0.0], [1.0, 1.0]])
    coef = np.column_stack([np.sort(rng.normal(size=K)), rng.normal(scale=0.1, size=K)])
    bins = rng.integers(0, K, n)
    y = (rng.random(n) < 0.05).astype(float)
    w = np.ones(n)

    # compile outside the timed region
    kernels._assign_cells_numba(m[:10], cells, x[:10], coef, False)
    kernels._bin_totals_numba(bins[:10], x[:10], y[:10], w[:10], K)

    cases = {
        "assign_nearest": (lambda: kernels._assign_cells_numpy(m, cells, x, coef, False),
                           lambda: kernels._assign_cells_numba(m, cells, x, coef, False)),
        "assign_scan": (lambda: kernels._assign_cells_numpy(m, cells, x, coef[::-1], False),
                        lambda: kernels._assign_cells_numba(m, cells, x, coef[::-1], False)),
        "bin_totals": (lambda: kernels._bin_totals_numpy(bins, x, y, w, K),
                       lambda: kernels._bin_totals_numba(bins, x, y, w, K)),
    }
    print(f"n={n:,} K={K} best of {a.repeat}")
    print(f"{'kernel':<16}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, (f_np, f_nb) in cases.items():
        t_np, t_nb = best_of(f_np, a.repeat), best_of(f_nb, a.repeat)
        print(f"{name:<16}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")

    if not a.skip_fit:
        t_np, t_nb = full_fit(n, K, True), full_fit(n, K, False)
        print(f"{'fit_pipeline':<16}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
