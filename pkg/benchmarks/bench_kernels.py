"""Time the compiled matching kernels against the pure-python fallback.

Runs the three hot primitives (pairwise IoU, greedy confidence-ordered
matching, interpolated AP) on workloads shaped like a busy evaluation
pass and prints median per-call times for both implementations.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from cotrainbox._kernels import fallback

try:
    from cotrainbox._kernels import _matchx
except ImportError:
    _matchx = None


def make_boxes(rng, count):
    x1 = rng.uniform(0, 1200, count)
    y1 = rng.uniform(0, 340, count)
    w = rng.uniform(8, 180, count)
    h = rng.uniform(8, 120, count)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def workloads():
    rng = np.random.default_rng(7)
    det_boxes = make_boxes(rng, 400)
    gt_boxes = make_boxes(rng, 250)

    match_dets = make_boxes(rng, 200)
    match_gts = np.concatenate([match_dets[:80] + rng.normal(0, 4, (80, 4)), make_boxes(rng, 40)])
    ignored = (rng.random(len(match_gts)) < 0.15).astype(np.uint8)

    short_flags = (rng.random(200) < 0.5).astype(np.int64)
    long_flags = (rng.random(5000) < 0.5).astype(np.int64)

    return [
        ("iou_matrix 400x250", lambda impl: impl.iou_matrix(det_boxes, gt_boxes)),
        ("greedy_match 200/120", lambda impl: impl.greedy_match(match_dets, match_gts, ignored, 0.5)),
        ("interpolated_ap 200", lambda impl: impl.interpolated_ap(short_flags, 100, 11)),
        ("interpolated_ap 5000", lambda impl: impl.interpolated_ap(long_flags, 2500, 11)),
    ]


def median_seconds(fn, repeats):
    fn()  # warm up
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        times.append(time.perf_counter() - started)
    return statistics.median(times)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="timed calls per kernel (default 200)")
    args = parser.parse_args()

    impls = [("python", fallback)]
    if _matchx is not None:
        impls.append(("compiled", _matchx))
    else:
        print("compiled extension not built; timing the fallback only")

    header = f"{'kernel':<24}" + "".join(f"{name:>14}" for name, _ in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, call in workloads():
        row = f"{label:<24}"
        medians = []
        for _, impl in impls:
            seconds = median_seconds(lambda: call(impl), args.repeats)
            medians.append(seconds)
            row += f"{seconds * 1e6:>12.1f}us"
        if len(medians) == 2:
            row += f"{medians[0] / medians[1]:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
