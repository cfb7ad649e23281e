"""Time the numba kernels against their pure-numpy fallbacks.

Both flavours are importable regardless of ULTRAG_BACKEND, so one process
can race them directly.  Numba timings exclude JIT compilation (warmup runs
first).  Usage:

    python3 benchmarks/bench_kernels.py [--nodes N] [--edges M] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ultrag import kernels


def median_time(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return sorted(times)[len(times) // 2]


def bench_diffuse(rng, n, m, repeats):
    src = rng.integers(0, n, size=m).astype(np.int32)
    dst = rng.integers(0, n, size=m).astype(np.int32)
    deg = np.bincount(src, minlength=n).astype(np.float64)
    deg[deg == 0] = 1.0
    x = rng.random(n)
    args = (src, dst, deg, x, n)
    return (median_time(kernels.diffuse_np, args, repeats),
            median_time(kernels.diffuse_nb, args, repeats))


def bench_project_max(rng, n, m, repeats):
    src = np.sort(rng.integers(0, n, size=m).astype(np.int32))
    targets = rng.integers(0, n, size=m).astype(np.int32)
    keys, counts = np.unique(src, return_counts=True)
    indptr = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    k = max(1, len(keys) // 2)
    src_ids = rng.choice(keys, size=k, replace=False).astype(np.int32)
    src_ids.sort()
    src_vals = rng.random(k)

    def run_np():
        kernels.project_max_np(keys, indptr, targets, src_ids, src_vals,
                               np.zeros(n))

    def run_nb():
        kernels.project_max_nb(keys, indptr, targets, src_ids, src_vals,
                               np.zeros(n))

    return (median_time(run_np, (), repeats), median_time(run_nb, (), repeats))


def bench_adc_scan(rng, m, codes_n, repeats):
    lut = rng.random((m, 256))
    codes = rng.integers(0, 256, size=(codes_n, m)).astype(np.uint8)
    args = (lut, codes)
    return (median_time(kernels.adc_scan_np, args, repeats),
            median_time(kernels.adc_scan_nb, args, repeats))


def bench_kmeans_assign(rng, n, d, k, repeats):
    points = rng.standard_normal((n, d))
    centroids = rng.standard_normal((k, d))
    args = (points, centroids)
    return (median_time(kernels.kmeans_assign_np, args, repeats),
            median_time(kernels.kmeans_assign_nb, args, repeats))


def main(argv=None):
    p = argparse.ArgumentParser(prog="bench_kernels")
    p.add_argument("--nodes", type=int, default=30000)
    p.add_argument("--edges", type=int, default=150000)
    p.add_argument("--codes", type=int, default=50000,
                   help="vectors per ADC scan")
    p.add_argument("--points", type=int, default=10000,
                   help="rows per k-means assignment")
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    kernels.warmup()
    rng = np.random.default_rng(args.seed)

    rows = [
        ("diffuse", *bench_diffuse(rng, args.nodes, args.edges, args.repeats)),
        ("project_max", *bench_project_max(rng, args.nodes, args.edges,
                                           args.repeats)),
        ("adc_scan", *bench_adc_scan(rng, 8, args.codes, args.repeats)),
        ("kmeans_assign", *bench_kmeans_assign(rng, args.points, 64, 64,
                                               args.repeats)),
    ]

    print(f"active backend: {kernels.ACTIVE_BACKEND}")
    print(f"{'kernel':<15}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        speed = t_np / t_nb if t_nb > 0 else float("inf")
        print(f"{name:<15}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}"
              f"{speed:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
