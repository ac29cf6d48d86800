"""Independent reference computations used to cross-check the fast paths.

Nothing here shares code with the routines it verifies: the IoU oracle
estimates areas by sampling, and the AP oracle recomputes every precision
point from scratch with exact rational arithmetic.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def _inside(x, y, cx, cy, w, h, theta_deg):
    t = math.radians(theta_deg)
    dx, dy = x - cx, y - cy
    along = dx * math.cos(t) + dy * math.sin(t)
    across = -dx * math.sin(t) + dy * math.cos(t)
    return (np.abs(along) < w / 2) & (np.abs(across) < h / 2)


def monte_carlo_iou(a, b, samples=100_000, rng=None):
    """Estimate IoU of two oriented rectangles by stratified sampling inside ``a``.

    ``a`` and ``b`` are anything with cx, cy, w, h, theta attributes. The
    intersection area is area(a) times the fraction of samples of ``a`` that
    fall in ``b``; one jittered sample per stratum keeps the error well below
    plain random sampling.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    side = int(math.ceil(math.sqrt(samples)))
    grid = (np.arange(side) + 0.0)[:, None]
    u = ((grid + rng.random((side, side))) / side - 0.5) * a.w
    v = ((grid.T + rng.random((side, side))) / side - 0.5) * a.h
    t = math.radians(a.theta)
    x = a.cx + u * math.cos(t) - v * math.sin(t)
    y = a.cy + u * math.sin(t) + v * math.cos(t)
    frac = _inside(x, y, b.cx, b.cy, b.w, b.h, b.theta).mean()
    area_a, area_b = a.w * a.h, b.w * b.h
    inter = area_a * frac
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def _polygon_iou(a, b):
    from shapely.geometry import Polygon

    def poly(box):
        t = math.radians(box.theta)
        c, s = math.cos(t), math.sin(t)
        pts = [(sx * box.w / 2, sy * box.h / 2) for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
        return Polygon([(box.cx + c * px - s * py, box.cy + s * px + c * py) for px, py in pts])

    pa, pb = poly(a), poly(b)
    inter = pa.intersection(pb).area
    if inter <= 1e-12 * min(pa.area, pb.area):
        return 0.0
    return inter / (pa.area + pb.area - inter)


def brute_force_ap(frames, iou_threshold, iou=None):
    """Reference 41-point AP (percent) over a dataset, or None when no GT is eligible.

    ``frames`` is a list of ``(gts, dets)`` where each gt is ``(box, eligible)``
    (``eligible=False`` marks a neutral GT) and each det is a box with a
    confidence. For every distinct confidence cut the matching is redone from
    scratch on the detections at or above the cut, so no state is carried
    between cuts.
    """
    raw_iou = _polygon_iou if iou is None else iou
    memo = {}

    def iou(d, g):
        # matching is redone at every cut; only the pairwise overlaps are reused
        key = (id(d), id(g))
        if key not in memo:
            memo[key] = raw_iou(d, g)
        return memo[key]

    n_gt = sum(1 for gts, _ in frames for _, ok in gts if ok)
    if n_gt == 0:
        return None
    cuts = sorted({d.confidence for _, dets in frames for d in dets}, reverse=True)
    curve = []
    for cut in cuts:
        tp = fp = 0
        for gts, dets in frames:
            chosen = [d for d in dets if d.confidence >= cut]
            # stable ordering: higher confidence first, input order on ties
            chosen = sorted(chosen, key=lambda d: -d.confidence)
            taken = [False] * len(gts)
            for det in chosen:
                best, best_iou = None, -1.0
                for j, (gt, ok) in enumerate(gts):
                    if ok and not taken[j]:
                        v = iou(det, gt)
                        if v >= iou_threshold and v > best_iou:
                            best, best_iou = j, v
                if best is not None:
                    taken[best] = True
                    tp += 1
                    continue
                neutral, neutral_iou = None, -1.0
                for j, (gt, ok) in enumerate(gts):
                    if not ok and not taken[j]:
                        v = iou(det, gt)
                        if v >= iou_threshold and v > neutral_iou:
                            neutral, neutral_iou = j, v
                if neutral is not None:
                    taken[neutral] = True
                else:
                    fp += 1
        if tp + fp:
            curve.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for k in range(41):
        r = Fraction(k, 40)
        best = Fraction(0)
        for rec, prec in curve:
            if rec >= r and prec > best:
                best = prec
        total += best
    return float(total * 100 / 41)
