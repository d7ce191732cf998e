"""Compare the numba and numpy kernel backends on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call of each kernel includes JIT compilation (or a cache
load), so every kernel is warmed up once before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from epigraph_splat import synthetic
from epigraph_splat.kernels import _numba, _numpy


def refine_workload(rng, n=20_000):
    views = synthetic.random_rig(rng, 3)
    X = synthetic.sample_visible_points(rng, views, n)
    P = np.broadcast_to(np.stack([v.P for v in views]), (n, 3, 3, 4))
    uv = np.stack([v.project(X) for v in views], axis=1) + rng.normal(0, 0.5, (n, 3, 2))
    X0 = X + rng.normal(0, 0.05, X.shape)
    return lambda mod: mod.refine_batch(P, uv, X0)


def knn_workload(rng, m=4000, k=10):
    pos = rng.uniform(-5, 5, (m, 3))
    return lambda mod: mod.knn_bruteforce(pos, k)


def ncc_workload(rng, size=256, window=11):
    a = rng.random((size, size))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    return lambda mod: mod.ncc_map(a, b, window, 1e-8)


def volume_workload(rng, n=1_000_000):
    s = rng.uniform(0.1, 1.0, (n, 3))
    return lambda mod: mod.volume_sum(s)


WORKLOADS = {
    "refine_batch (20k pts, 3 views)": refine_workload,
    "knn_bruteforce (M=4000, k=10)": knn_workload,
    "ncc_map (256x256, w=11)": ncc_workload,
    "volume_sum (1e6 scales)": volume_workload,
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for name, make in WORKLOADS.items():
        run = make(rng)
        run(_numba)  # compile / load cache
        t_np = best_of(lambda: run(_numpy), args.repeat)
        t_nb = best_of(lambda: run(_numba), args.repeat)
        print(f"{name:36s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
