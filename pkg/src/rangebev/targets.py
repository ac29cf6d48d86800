"""Anchor grid, box regression targets and the detector loss terms.

Regression targets are plain differences, prediction minus ground truth,
with no log scaling of the sizes. All boxes are compared in canonical form
so two descriptions of the same rectangle give identical targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from rangebev.bev import BevGrid
from rangebev.errors import ConfigError, DomainError, InvalidBoxError
from rangebev.geometry import RotatedBox, canonicalize, iou_matrix


@dataclass(frozen=True)
class AnchorSpec:
    size_px: tuple = (45, 20)  # length x width of an average car at 0.1 m/px
    orientations: int = 16
    grid_stride_px: int = 4
    grid: BevGrid = field(default_factory=BevGrid)

    def __post_init__(self):
        if self.orientations < 1:
            raise ConfigError("need at least one anchor orientation")
        if self.grid_stride_px < 1:
            raise ConfigError("anchor stride must be a positive pixel count")

    @property
    def angles(self) -> np.ndarray:
        """Evenly spaced over [0, 180) degrees."""
        return np.arange(self.orientations) * (180.0 / self.orientations)

    @property
    def feature_shape(self) -> tuple:
        return (-(-self.grid.rows // self.grid_stride_px), -(-self.grid.cols // self.grid_stride_px))


def anchor_array(spec: AnchorSpec = AnchorSpec()) -> np.ndarray:
    """All anchors as an (N, 5) array of canonical (cx, cy, w, h, theta).

    Ordered by feature row, feature column, then orientation.
    """
    g = spec.grid
    res = g.resolution
    fr, fc = spec.feature_shape
    step = spec.grid_stride_px * res
    # centers of each stride block, measured from the far-left corner like the pixel grid
    xs = g.x_range[1] - (np.arange(fr) + 0.5) * step
    ys = g.y_range[1] - (np.arange(fc) + 0.5) * step
    w, h = sorted((spec.size_px[0] * res, spec.size_px[1] * res), reverse=True)
    thetas = np.array([canonicalize(RotatedBox(0, 0, w, h, a)).theta for a in spec.angles])
    xx, yy, tt = np.meshgrid(xs, ys, thetas, indexing="ij")
    n = xx.size
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(n, w), np.full(n, h), tt.ravel()])


def generate_anchors(spec: AnchorSpec = AnchorSpec()) -> list:
    return [RotatedBox(*map(float, row)) for row in anchor_array(spec)]


@dataclass(frozen=True)
class RegressionTargets:
    dx: float
    dy: float
    dh: float
    dw: float
    dtheta: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise DomainError(f"{f.name} must be finite")

    def as_tuple(self) -> tuple:
        return (self.dx, self.dy, self.dh, self.dw, self.dtheta)


def regression_targets(pred: RotatedBox, gt, rotational: bool = True) -> RegressionTargets:
    """Differences ``pred - gt`` for center, height, width and (rotational branch) angle.

    ``gt`` may be a RotatedBox or anything carrying one in ``.box``.
    """
    gt_box = getattr(gt, "box", gt)
    p, t = canonicalize(pred), canonicalize(gt_box)
    return RegressionTargets(
        dx=p.cx - t.cx,
        dy=p.cy - t.cy,
        dh=p.h - t.h,
        dw=p.w - t.w,
        dtheta=(p.theta - t.theta) if rotational else None,
    )


def apply_deltas(anchor: RotatedBox, t: RegressionTargets) -> RotatedBox:
    """Recover the box that ``t`` was measured against: ``anchor - t``, canonicalized.

    Raises InvalidBoxError when a dimension ends up non-positive.
    """
    a = canonicalize(anchor)
    theta = a.theta - (t.dtheta or 0.0)
    w, h = a.w - t.dw, a.h - t.dh
    if w <= 0 or h <= 0:
        raise InvalidBoxError(f"deltas leave a non-positive dimension (w={w}, h={h})")
    return canonicalize(RotatedBox(a.cx - t.dx, a.cy - t.dy, w, h, theta, a.confidence, a.class_id))


def smooth_l1(x: float, sigma: float = 1.0) -> float:
    """0.5 * sigma * x**2 for |x| < 1/sigma, else |x| - 0.5/sigma."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    ax = abs(x)
    if ax < 1.0 / sigma:
        return 0.5 * sigma * x * x
    return ax - 0.5 / sigma


def smooth_l1_grad(x: float, sigma: float = 1.0) -> float:
    if abs(x) < 1.0 / sigma:
        return sigma * x
    return math.copysign(1.0, x)


RPN_SIGMA = 3.0
HEAD_SIGMA = 1.0


def regression_loss(t: RegressionTargets, sigma: float) -> float:
    return sum(smooth_l1(v, sigma) for v in t.as_tuple() if v is not None)


@dataclass(frozen=True)
class LossBreakdown:
    rpn_reg: float = 0.0
    rpn_cls: float = 0.0
    head_h_reg: float = 0.0
    head_h_cls: float = 0.0
    head_r_reg: float = 0.0
    head_r_cls: float = 0.0
    # regression weighted twice as high as classification in every stage
    weights: dict = field(default_factory=lambda: {
        "rpn_reg": 2.0, "rpn_cls": 1.0,
        "head_h_reg": 2.0, "head_h_cls": 1.0,
        "head_r_reg": 2.0, "head_r_cls": 1.0,
    })

    TERMS = ("rpn_reg", "rpn_cls", "head_h_reg", "head_h_cls", "head_r_reg", "head_r_cls")


def total_loss(b: LossBreakdown) -> float:
    total = 0.0
    for name in LossBreakdown.TERMS:
        value = getattr(b, name)
        if value < 0 or not math.isfinite(value):
            raise DomainError(f"loss term {name} must be a finite non-negative number, got {value}")
        total += b.weights.get(name, 1.0) * value
    return total


def label_anchors(anchors: Sequence[RotatedBox], gts: Sequence, positive_iou: float = 0.7,
                  negative_iou: float = 0.3) -> np.ndarray:
    """1 for positive, 0 for negative, -1 for ignored anchors by rotated IoU with the ground truth.

    Besides the threshold rule, each GT's best anchor is made positive so
    every object gets at least one target.
    """
    labels = np.full(len(anchors), -1, dtype=np.int8)
    if not len(anchors):
        return labels
    boxes = [getattr(g, "box", g) for g in gts]
    if not boxes:
        labels[:] = 0
        return labels
    ious = iou_matrix(anchors, boxes)
    best = ious.max(axis=1)
    labels[best < negative_iou] = 0
    labels[best >= positive_iou] = 1
    for j in range(len(boxes)):
        if ious[:, j].max() > 0:
            labels[int(np.argmax(ious[:, j]))] = 1
    return labels
