"""Oracle-backed verification suites shared by the ``selfcheck`` command and the tests."""

from __future__ import annotations

import math
import time
from typing import NamedTuple

import numpy as np

from rangebev.geometry import RotatedBox, rotated_iou
from rangebev.kitti_eval import EvalConfig, bucket_name, difficulty_of, evaluate
from rangebev.oracles import brute_force_ap, monte_carlo_iou
from rangebev.pointcloud_io import GroundTruthObject


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


def random_box_pair(rng):
    """Two overlapping-ish boxes: the second is a jittered, resized, rotated copy nearby."""
    a = RotatedBox(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.5, 6), rng.uniform(0.3, 3),
                   rng.uniform(-90, 90))
    b = RotatedBox(a.cx + rng.normal(0, 1.5), a.cy + rng.normal(0, 1.5), rng.uniform(0.5, 6),
                   rng.uniform(0.3, 3), rng.uniform(-90, 90))
    return a, b


def iou_check(pairs: int = 1000, samples: int = 100_000, tol: float = 0.01, seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        a, b = random_box_pair(rng)
        worst = max(worst, abs(rotated_iou(a, b) - monte_carlo_iou(a, b, samples, rng)))
    return CheckResult("rotated IoU vs Monte-Carlo", worst <= tol,
                       f"{pairs} pairs, max |error| {worst:.5f} (tol {tol})", time.perf_counter() - start)


def random_gt(rng, x_range=(28.0, 42.0), y_range=(-4.0, 4.0)):
    box = RotatedBox(rng.uniform(*x_range), rng.uniform(*y_range), rng.uniform(3.5, 5.0),
                     rng.uniform(1.5, 2.2), rng.uniform(-90, 90))
    return GroundTruthObject(box, bbox2d_height=float(rng.choice([15, 30, 50])),
                             occlusion=int(rng.integers(0, 4)), truncation=float(rng.choice([0.0, 0.2, 0.4, 0.8])))


def random_micro_dataset(rng, max_frames=10, max_objects=8):
    """Frames of clustered boxes straddling the 35 m bucket edge, with jittered true
    detections, spurious boxes and coarse scores that force ties."""
    gts, dets = {}, {}
    for f in range(int(rng.integers(1, max_frames + 1))):
        fid = f"{f:06d}"
        frame_gts = [random_gt(rng) for _ in range(int(rng.integers(0, max_objects + 1)))]
        frame_dets = []
        for g in frame_gts:
            if rng.random() < 0.8:
                b = g.box
                frame_dets.append(RotatedBox(b.cx + rng.normal(0, 0.4), b.cy + rng.normal(0, 0.4), b.w, b.h,
                                             b.theta + rng.normal(0, 5)))
        for _ in range(int(rng.integers(0, 4))):
            frame_dets.append(random_gt(rng).box)
        gts[fid] = frame_gts
        dets[fid] = [d.with_confidence(float(np.round(rng.random(), 1))) for d in frame_dets]
    return gts, dets


def brute_force_cell(gts, dets, difficulty, bucket, threshold, lateral=(-35.0, 35.0)):
    lo, hi = bucket

    def inside(b):
        return lo <= b.cx < hi and lateral[0] <= b.cy < lateral[1]

    frames = []
    for fid in gts:
        fg = [(g.box, difficulty_of(g) <= difficulty) for g in gts[fid] if inside(g.box)]
        fd = [d for d in dets.get(fid, []) if inside(d)]
        frames.append((fg, fd))
    return brute_force_ap(frames, threshold)


def brute_force_report(gts, dets, config=EvalConfig()):
    out = {}
    for thr in config.iou_thresholds:
        for diff in config.difficulties:
            for b in config.buckets:
                out[(diff.label, bucket_name(*b), thr)] = brute_force_cell(gts, dets, diff, b, thr,
                                                                           config.lateral_range)
    return out


def ap_check(datasets: int = 200, seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = cells = 0
    for _ in range(datasets):
        gts, dets = random_micro_dataset(rng)
        report = evaluate(gts, dets, keep_curves=False)
        for key, expected in brute_force_report(gts, dets).items():
            cells += 1
            mismatches += report.cells[key].ap != expected
    return CheckResult("AP vs brute force", mismatches == 0,
                       f"{datasets} datasets, {cells} cells, {mismatches} mismatches", time.perf_counter() - start)


def worked_examples() -> CheckResult:
    start = time.perf_counter()
    sq = RotatedBox(0, 0, 2, 2, 0)
    got = (rotated_iou(sq, sq), rotated_iou(sq, RotatedBox(1, 0, 2, 2, 0)), rotated_iou(sq, RotatedBox(0, 0, 2, 2, 45)))
    ok = abs(got[0] - 1) <= 1e-9 and abs(got[1] - 1 / 3) <= 1e-9 and abs(got[2] - 1 / math.sqrt(2)) <= 0.01
    return CheckResult("IoU worked examples", ok, "IoU " + ", ".join(f"{v:.6f}" for v in got),
                       time.perf_counter() - start)


def run_all(pairs: int = 1000, datasets: int = 200, seed: int = 0) -> list:
    return [worked_examples(), iou_check(pairs, seed=seed), ap_check(datasets, seed=seed)]
