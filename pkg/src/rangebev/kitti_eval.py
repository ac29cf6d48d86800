"""BEV average precision in the style of the KITTI object benchmark.

Detections are matched greedily in descending confidence under rotated IoU,
precision is interpolated at 41 evenly spaced recall points (0, 0.025, ...,
1), and results are reported per difficulty, per longitudinal range bucket
and per IoU threshold.
"""

from __future__ import annotations

import bisect
import enum
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from rangebev.geometry import RotatedBox, rotated_iou
from rangebev.range_split import weighted_map

log = logging.getLogger(__name__)

RECALL_POINTS = 41


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class DifficultyRule:
    min_bbox_height: float
    max_occlusion: int
    max_truncation: float

    def admits(self, gt) -> bool:
        return (gt.bbox2d_height >= self.min_bbox_height and gt.occlusion <= self.max_occlusion
                and gt.truncation <= self.max_truncation)


# KITTI devkit thresholds
DIFFICULTY_RULES = {
    Difficulty.EASY: DifficultyRule(40, 0, 0.15),
    Difficulty.MODERATE: DifficultyRule(25, 1, 0.30),
    Difficulty.HARD: DifficultyRule(25, 2, 0.50),
}


def difficulty_of(gt, rules: Mapping = DIFFICULTY_RULES) -> Difficulty:
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if rules[level].admits(gt):
            return level
    return Difficulty.IGNORED


TP, FP, NEUTRAL = "tp", "fp", "neutral"


@dataclass
class MatchResult:
    det_status: list  # per input detection: "tp", "fp" or "neutral"
    gt_matched: list  # per input GT
    confidences: list

    def pairs(self):
        return list(zip(self.confidences, self.det_status))


def match_detections(dets: Sequence[RotatedBox], gts: Sequence, iou_threshold: float,
                     eligible: Optional[Sequence[bool]] = None) -> MatchResult:
    """Greedy confidence-ordered matching of one frame.

    Each detection claims the unmatched eligible GT of highest IoU at or
    above the threshold (TP). Failing that it may claim an unmatched
    non-eligible GT and becomes neutral; otherwise it is a false positive.
    """
    boxes = [getattr(g, "box", g) for g in gts]
    eligible = [True] * len(boxes) if eligible is None else list(eligible)
    taken = [False] * len(boxes)
    status = [FP] * len(dets)
    order = sorted(range(len(dets)), key=lambda i: -(dets[i].confidence or 0.0))
    for i in order:
        det = dets[i]
        ious = [rotated_iou(det, b) for b in boxes]
        for want_eligible, verdict in ((True, TP), (False, NEUTRAL)):
            best, best_iou = None, -1.0
            for j, v in enumerate(ious):
                if eligible[j] is want_eligible and not taken[j] and v >= iou_threshold and v > best_iou:
                    best, best_iou = j, v
            if best is not None:
                taken[best] = True
                status[i] = verdict
                break
    matched = [t and e for t, e in zip(taken, eligible)]
    return MatchResult(status, matched, [d.confidence or 0.0 for d in dets])


@dataclass
class PrCurve:
    points: list  # (recall, precision) after each distinct confidence cut
    interpolated: list  # interpolated precision at recall k/40, k = 0..40

    @property
    def recall_grid(self) -> list:
        return [k / (RECALL_POINTS - 1) for k in range(RECALL_POINTS)]

    def to_csv(self) -> str:
        rows = ["recall,precision"]
        rows += [f"{r:.6f},{float(p):.6f}" for r, p in zip(self.recall_grid, self.interpolated)]
        return "\n".join(rows) + "\n"


def pr_curve(matches: Sequence, total_eligible_gts: int) -> PrCurve:
    """Raw and 41-point interpolated PR curve of (confidence, status) pairs."""
    scored = sorted(((c, s) for c, s in matches if s != NEUTRAL), key=lambda cs: -cs[0])
    tps, fps = [], []
    tp = fp = 0
    for i, (conf, st) in enumerate(scored):
        tp += st == TP
        fp += st == FP
        if i + 1 == len(scored) or scored[i + 1][0] != conf:
            tps.append(tp)
            fps.append(fp)
    n = total_eligible_gts
    precisions = [Fraction(t, t + f) for t, f in zip(tps, fps)]
    # suffix maximum: best precision at this recall or beyond
    best_after = precisions[:]
    for i in range(len(best_after) - 2, -1, -1):
        best_after[i] = max(best_after[i], best_after[i + 1])
    scaled = [t * (RECALL_POINTS - 1) for t in tps]
    interp = []
    for k in range(RECALL_POINTS):
        # first cut whose recall tp/n reaches k/40
        idx = bisect.bisect_left(scaled, k * n) if n else len(tps)
        interp.append(best_after[idx] if idx < len(tps) else Fraction(0))
    points = [(t / n if n else 0.0, float(p)) for t, p in zip(tps, precisions)]
    return PrCurve(points, interp)


def ap_41(matches: Sequence, total_eligible_gts: int) -> Optional[float]:
    """41-point interpolated AP in percent; None when there is no eligible GT."""
    if total_eligible_gts <= 0:
        return None
    curve = pr_curve(matches, total_eligible_gts)
    return float(sum(curve.interpolated, Fraction(0)) * 100 / RECALL_POINTS)


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = (0.7, 0.5)
    buckets: tuple = ((0.0, 35.0), (35.0, 70.0))
    lateral_range: tuple = (-35.0, 35.0)
    difficulties: tuple = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)


def bucket_name(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


@dataclass
class Cell:
    ap: Optional[float]
    n_gt: int
    n_det: int
    curve: Optional[PrCurve] = None


@dataclass
class EvalReport:
    cells: dict = field(default_factory=dict)  # (difficulty label, bucket, threshold) -> Cell
    buckets: tuple = ()
    thresholds: tuple = ()
    difficulties: tuple = ()
    warnings: list = field(default_factory=list)

    @property
    def combined_bucket(self) -> str:
        return bucket_name(self.buckets[0][0], self.buckets[-1][1])

    def bucket_names(self) -> list:
        return [bucket_name(*b) for b in self.buckets] + [self.combined_bucket]

    def ap(self, difficulty, bucket: str, threshold: float) -> Optional[float]:
        label = difficulty.label if isinstance(difficulty, Difficulty) else str(difficulty)
        return self.cells[(label, bucket, threshold)].ap

    def populated(self):
        return [(k, c) for k, c in self.cells.items() if c.ap is not None]

    def to_dict(self) -> dict:
        rows = []
        for (diff, bucket, thr), cell in self.cells.items():
            rows.append({"difficulty": diff, "range": bucket, "iou_threshold": thr,
                         "ap": None if cell.ap is None else round(cell.ap, 6),
                         "gt_count": cell.n_gt, "detection_count": cell.n_det})
        return {"cells": rows, "warnings": list(self.warnings)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Plain-text table: one row per IoU threshold, difficulties grouped by range."""
        names = self.bucket_names()
        diffs = [d.label for d in self.difficulties]
        width = 9
        head1 = f"{'':<14}" + "".join(f"| {n + 'm':^{width * len(diffs) - 2}} " for n in names)
        head2 = f"{'IoU':<14}" + "".join("|" + "".join(f"{d:>{width}}" for d in diffs) for _ in names)
        lines = [head1, head2, "-" * len(head2)]
        for thr in self.thresholds:
            row = f"{thr:<14g}"
            for n in names:
                row += "|"
                for d in diffs:
                    ap = self.cells[(d, n, thr)].ap
                    row += f"{'-' if ap is None else format(ap, '.1f'):>{width}}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def _in_region(box: RotatedBox, lo: float, hi: float, lateral: tuple) -> bool:
    return lo <= box.cx < hi and lateral[0] <= box.cy < lateral[1]


def evaluate(gts: Mapping, dets: Mapping, config: EvalConfig = EvalConfig(),
             rules: Mapping = DIFFICULTY_RULES, keep_curves: bool = True) -> EvalReport:
    """Evaluate detections ``{frame_id: [RotatedBox]}`` against ``{frame_id: [GroundTruthObject]}``."""
    report = EvalReport(buckets=tuple(config.buckets), thresholds=tuple(config.iou_thresholds),
                        difficulties=tuple(config.difficulties))
    unknown = [fid for fid in dets if fid not in gts]
    for fid in unknown:
        msg = f"detections for unknown frame {fid!r} ignored"
        log.warning(msg)
        report.warnings.append(msg)
    frames = list(gts)
    levels = {fid: [difficulty_of(g, rules) for g in gts[fid]] for fid in frames}

    for thr in config.iou_thresholds:
        for diff in config.difficulties:
            per_bucket = []
            for lo, hi in config.buckets:
                matches, n_gt, n_det = [], 0, 0
                for fid in frames:
                    fg = [(g, lvl) for g, lvl in zip(gts[fid], levels[fid])
                          if _in_region(g.box, lo, hi, config.lateral_range)]
                    fd = [d for d in dets.get(fid, []) if _in_region(d, lo, hi, config.lateral_range)]
                    eligible = [lvl <= diff for _, lvl in fg]
                    n_gt += sum(eligible)
                    n_det += len(fd)
                    result = match_detections(fd, [g for g, _ in fg], thr, eligible)
                    matches.extend(result.pairs())
                ap = ap_41(matches, n_gt)
                curve = pr_curve(matches, n_gt) if keep_curves and n_gt else None
                report.cells[(diff.label, bucket_name(lo, hi), thr)] = Cell(ap, n_gt, n_det, curve)
                per_bucket.append((ap, n_gt, n_det))
            n_total = sum(n for _, n, _ in per_bucket)
            combined = None
            if n_total and len(per_bucket) == 2:
                (ap_a, n_a, _), (ap_b, n_b, _) = per_bucket
                combined = weighted_map(ap_a, n_a, ap_b, n_b)
            elif n_total:
                combined = sum(n * ap for ap, n, _ in per_bucket if n) / n_total
            report.cells[(diff.label, report.combined_bucket, thr)] = Cell(
                combined, n_total, sum(d for _, _, d in per_bucket))
    return report
