#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the three hot kernels at sizes representative of real detector dumps
(hundreds of detections per image, pair stores in the tens of thousands).
"""

import argparse
import time

import numpy as np

from alsim.kernels import _fallback

try:
    from alsim.kernels import _native
except ImportError:
    _native = None


def _time(fn, *args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def random_boxes(rng, n):
    xy = rng.uniform(0, 600, size=(n, 2))
    wh = rng.uniform(4, 250, size=(n, 2))
    return np.hstack([xy, xy + wh])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []

    for n, m in ((100, 100), (500, 500), (2000, 100)):
        a, b = random_boxes(rng, n), random_boxes(rng, m)
        cases.append((f"pairwise_iou {n}x{m}", "pairwise_iou", (a, b)))

    for n in (50, 200, 800):
        boxes = random_boxes(rng, n)
        classes = rng.integers(0, 20, size=n)
        cases.append((f"bib_pairs n={n}", "bib_pairs", (boxes, classes, 3.0, 0.8)))

    for p, q, d in ((1000, 100, 32), (5000, 1000, 32), (20000, 5000, 64)):
        pts = rng.normal(size=(p, d))
        ref = rng.normal(size=(q, d))
        cases.append((f"min_dist {p}x{q} d={d}", "min_dist", (pts, ref)))

    print(f"{'case':28s} {'fallback':>12s} {'native':>12s} {'speedup':>8s}")
    for label, name, fn_args in cases:
        t_fb = _time(getattr(_fallback, name), *fn_args, repeats=args.repeats)
        if _native is None:
            print(f"{label:28s} {t_fb * 1e3:10.2f}ms {'n/a':>12s} {'n/a':>8s}")
            continue
        t_nat = _time(getattr(_native, name), *fn_args, repeats=args.repeats)
        print(f"{label:28s} {t_fb * 1e3:10.2f}ms {t_nat * 1e3:10.2f}ms {t_fb / t_nat:7.1f}x")

    if _native is None:
        print("\ncompiled extension not built; showing fallback timings only")


if __name__ == "__main__":
    main()
