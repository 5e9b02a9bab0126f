#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the IoU-matrix and greedy-matching kernels on synthetic box sets,
plus an end-to-end matching pass shaped like a full evaluation run
(many images, few boxes each). Run after building the extension:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from modcascade._kernels import _pykernels

try:
    from modcascade._kernels import _ckernels
except ImportError:
    _ckernels = None


def random_boxes(rng, n, span=800.0):
    out = np.empty((n, 4))
    out[:, 0] = rng.uniform(0, span * 0.8, n)
    out[:, 1] = rng.uniform(0, span * 0.8, n)
    out[:, 2] = rng.uniform(10, span * 0.2, n)
    out[:, 3] = rng.uniform(10, span * 0.2, n)
    return out


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_iou_matrix(impl, rng, n, m, repeat):
    a, b = random_boxes(rng, n), random_boxes(rng, m)
    return best_of(lambda: impl.iou_matrix(a, b), repeat)


def bench_matching(impl, rng, n_images, dets_per_image, repeat):
    """Per-image matching loop, the shape of a full evaluation pass."""
    images = []
    for _ in range(n_images):
        gts = random_boxes(rng, dets_per_image)
        dets = gts + rng.normal(0, 3.0, gts.shape)
        order = rng.permutation(dets_per_image).astype(np.int64)
        images.append((dets, gts, order))

    def run():
        for dets, gts, order in images:
            mat = impl.iou_matrix(dets, gts)
            impl.greedy_match(mat, order, 0.5)

    return best_of(run, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    rng0 = np.random.default_rng(0)
    # parity guard before timing anything
    if _ckernels is not None:
        a, b = random_boxes(rng0, 64), random_boxes(rng0, 64)
        assert np.array_equal(_pykernels.iou_matrix(a, b), _ckernels.iou_matrix(a, b))

    print(f"{'workload':<36}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    workloads = [
        ("iou_matrix 100x100", lambda impl: bench_iou_matrix(impl, np.random.default_rng(1), 100, 100, args.repeat)),
        ("iou_matrix 1000x1000", lambda impl: bench_iou_matrix(impl, np.random.default_rng(2), 1000, 1000, args.repeat)),
        ("matching 10k images x 2 boxes", lambda impl: bench_matching(impl, np.random.default_rng(3), 10_000, 2, args.repeat)),
        ("matching 2k images x 16 boxes", lambda impl: bench_matching(impl, np.random.default_rng(4), 2_000, 16, args.repeat)),
    ]
    for name, bench in workloads:
        times = [bench(impl) for _, impl in backends]
        row = f"{name:<36}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
