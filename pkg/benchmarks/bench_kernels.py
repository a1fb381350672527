"""Compiled kernels vs. the numpy fallback on the three hot loops.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints median wall time per backend, the speedup, and whether outputs match.
"""
import argparse
import statistics
import time

import numpy as np

from iovpr import _fallback
from iovpr.panorama import _face_lookup

try:
    from iovpr import _kernels as compiled
except ImportError:
    compiled = None


def median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def cases(rng):
    lats = rng.uniform(52.3, 52.4, 1_000_000)
    lons = rng.uniform(4.8, 5.0, 1_000_000)
    yield "haversine 1M points", lambda m: m.haversine_many(52.37, 4.89, lats, lons), 1e-6

    G = rng.standard_normal((100_000, 64))
    Q = rng.standard_normal((32, 64))
    yield "sqdist 100k x 64-d, 32 queries", lambda m: m.sqdist_block(G, Q), 0.0

    pano = rng.integers(0, 256, (2000, 4000, 3), dtype=np.uint8)
    rows, cols = _face_lookup("front", 960, 2000, 4000)
    rows, cols = np.ascontiguousarray(rows), np.ascontiguousarray(cols)
    yield "bilinear 960x960 face from 2000x4000", lambda m: m.bilinear_sample_wrap(pano, rows, cols), 0.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}  match")
    for name, run, tol in cases(rng):
        t_py, out_py = median_time(lambda: run(_fallback), args.repeat)
        if compiled is None:
            print(f"{name:40s} {t_py * 1e3:9.1f}ms {'-':>10s} {'-':>8s}  -")
            continue
        t_c, out_c = median_time(lambda: run(compiled), args.repeat)
        diff = np.abs(out_c.astype(np.float64) - out_py.astype(np.float64)).max()
        ok = "exact" if diff == 0 else (f"<= {diff:.1e}" if diff <= tol else f"DIFF {diff:.1e}")
        print(f"{name:40s} {t_py * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms {t_py / t_c:7.1f}x  {ok}")


if __name__ == "__main__":
    main()
