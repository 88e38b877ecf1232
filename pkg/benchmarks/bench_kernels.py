"""Benchmark the compiled kernels against the pure-NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--sites N] [--repeat R]
"""

import argparse
import math
import time

import numpy as np

from biosift import refdata
from biosift._kernels import IMPLEMENTATION, pure
from biosift.fusion import fit_empirical_prior

try:
    from biosift._kernels import _core as compiled
except ImportError:
    compiled = None


def timeit(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_poisson_binomial(impl, rng, n_vectors=20_000, length=8):
    vectors = [rng.random(length) for _ in range(n_vectors)]

    def run():
        for p in vectors:
            impl.poisson_binomial_pmf(p)

    return run


def bench_quads(impl, rng, n_pairs=20_000):
    def corners(cx, cy, w, h, a):
        hw, hh = w / 2, h / 2
        local = np.array([(hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)])
        c, s = math.cos(a), math.sin(a)
        return local @ np.array([(c, s), (-s, c)]) + (cx, cy)

    pairs = [
        (
            corners(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(-1.5, 1.5)),
            corners(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(-1.5, 1.5)),
        )
        for _ in range(n_pairs)
    ]

    def run():
        for qa, qb in pairs:
            impl.quad_intersection_area(qa, qb)

    return run


def bench_fused_batch(impl, rng, n_sites):
    prior = fit_empirical_prior(refdata.TANK_COUNT_FREQ, refdata.PILE_COUNT_FREQ)
    tank_count = rng.integers(0, 5, n_sites)
    pile_count = rng.integers(0, 7, n_sites)
    tank_start = np.zeros(n_sites, dtype=np.int64)
    np.cumsum(tank_count[:-1], out=tank_start[1:])
    pile_start = np.zeros(n_sites, dtype=np.int64)
    np.cumsum(pile_count[:-1], out=pile_start[1:])
    args = (
        rng.random(n_sites),
        rng.random(int(tank_count.sum())),
        tank_start,
        tank_count,
        rng.random(int(pile_count.sum())),
        pile_start,
        pile_count,
        prior.table,
    )

    def run():
        impl.fused_scores_batch(*args)

    return run


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sites", type=int, default=100_000, help="batch size for the fused-score benchmark")
    parser.add_argument("--repeat", type=int, default=3, help="repetitions (best of)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    impls = [("pure", pure)]
    if compiled is not None:
        impls.append(("compiled", compiled))
    print(f"default implementation: {IMPLEMENTATION}")
    print(f"{'benchmark':<28}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}")
    benches = [
        ("poisson_binomial x20k (n=8)", bench_poisson_binomial),
        ("quad_intersection x20k", bench_quads),
        (f"fused_scores ({args.sites} sites)", lambda impl, rng: bench_fused_batch(impl, rng, args.sites)),
    ]
    for label, make in benches:
        times = []
        for _, impl in impls:
            times.append(timeit(make(impl, np.random.default_rng(0)), args.repeat))
        row = f"{label:<28}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
