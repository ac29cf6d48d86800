"""Oriented BEV boxes: canonical form, corners, rotated IoU and rotated NMS.

Angles are degrees, measured counter-clockwise from the +x (forward) axis.
A box's ``w`` runs along its heading and is the longer side once canonical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from rangebev.errors import InvalidBoxError

# relative area below which an intersection counts as mere contact
_CONTACT_EPS = 1e-12


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float
    confidence: Optional[float] = None
    class_id: str = "car"

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidBoxError(f"{name} must be finite, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box dimensions must be positive, got w={self.w}, h={self.h}")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InvalidBoxError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def range(self) -> float:
        """Radial distance of the center from the sensor."""
        return math.hypot(self.cx, self.cy)

    def with_confidence(self, confidence: Optional[float]) -> "RotatedBox":
        return replace(self, confidence=confidence)


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple  # ((x, y), ...) counter-clockwise

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    @property
    def centroid(self) -> tuple:
        xs, ys = zip(*self.vertices)
        return (sum(xs) / len(xs), sum(ys) / len(ys))

    def __len__(self):
        return len(self.vertices)


def wrap_angle(theta: float) -> float:
    """Map an angle in degrees into [-90, 90). Values already in range are returned untouched."""
    if -90.0 <= theta < 90.0:
        return theta
    wrapped = math.fmod(theta + 90.0, 180.0)
    if wrapped < 0:
        wrapped += 180.0
    wrapped -= 90.0
    if wrapped >= 90.0:
        wrapped -= 180.0
    return wrapped


def canonicalize(box: RotatedBox) -> RotatedBox:
    """Return the unique representation with ``w >= h`` and ``theta`` in [-90, 90).

    Swapping width and height while adding 90 degrees describes the same
    rectangle, so the longer side is always stored as ``w``.
    """
    w, h, theta = box.w, box.h, box.theta
    if w < h:
        w, h = h, w
        theta += 90.0
    theta = wrap_angle(theta)
    if (w, h, theta) == (box.w, box.h, box.theta):
        return box
    return replace(box, w=w, h=h, theta=theta)


def is_canonical(box: RotatedBox) -> bool:
    return box.w >= box.h and -90.0 <= box.theta < 90.0


def box_corners(box: RotatedBox) -> ConvexPolygon:
    rad = math.radians(box.theta)
    c, s = math.cos(rad), math.sin(rad)
    hw, hh = box.w / 2.0, box.h / 2.0
    local = ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh))
    return ConvexPolygon(tuple((box.cx + c * x - s * y, box.cy + s * x + c * y) for x, y in local))


def polygon_area(vertices: Sequence) -> float:
    """Signed shoelace area; positive for counter-clockwise order."""
    n = len(vertices)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _line_intersection(p, q, a, b):
    # segment p->q against the infinite line through a->b
    d1 = _cross(a, b, p)
    d2 = _cross(a, b, q)
    t = d1 / (d1 - d2)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def clip_convex(subject: Sequence, clip: Sequence) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the CCW convex polygon ``clip``."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % n]
        inputs, output = output, []
        prev = inputs[-1]
        prev_in = _cross(a, b, prev) >= 0.0
        for cur in inputs:
            cur_in = _cross(a, b, cur) >= 0.0
            if cur_in:
                if not prev_in:
                    output.append(_line_intersection(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_line_intersection(prev, cur, a, b))
            prev, prev_in = cur, cur_in
    return output


def intersection_area(a: RotatedBox, b: RotatedBox) -> float:
    ra = 0.5 * math.hypot(a.w, a.h)
    rb = 0.5 * math.hypot(b.w, b.h)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    poly = clip_convex(box_corners(a).vertices, box_corners(b).vertices)
    area = polygon_area(poly)
    if area <= _CONTACT_EPS * min(a.area, b.area):
        return 0.0
    return area


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def iou_matrix(boxes_a: Sequence[RotatedBox], boxes_b: Sequence[RotatedBox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = rotated_iou(a, b)
    return out


def nms_rotated(boxes: Iterable[RotatedBox], iou_threshold: float = 0.3) -> list:
    """Greedy rotated non-maximum suppression.

    Boxes are visited by descending confidence (earlier input wins ties); a
    box is kept unless it overlaps an already kept box by more than
    ``iou_threshold``. The default threshold is a guess: no value is given
    for the original detector.
    """
    boxes = list(boxes)
    order = sorted(range(len(boxes)), key=lambda i: (-(boxes[i].confidence or 0.0), i))
    kept = []
    for i in order:
        candidate = boxes[i]
        if all(rotated_iou(candidate, k) <= iou_threshold for k in kept):
            kept.append(candidate)
    return kept


def points_in_box(xy: np.ndarray, box: RotatedBox) -> np.ndarray:
    """Boolean mask of the (N, 2) points lying inside the box footprint."""
    xy = np.asarray(xy, dtype=float)
    rad = math.radians(box.theta)
    c, s = math.cos(rad), math.sin(rad)
    dx = xy[:, 0] - box.cx
    dy = xy[:, 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= box.w / 2.0) & (np.abs(v) <= box.h / 2.0)


def box_sample_points(box: RotatedBox, resolution: float) -> np.ndarray:
    """Cell-center sample grid over the box interior at ``resolution`` meters, shape (N, 2)."""
    nu = max(1, int(math.ceil(box.w / resolution - 1e-9)))
    nv = max(1, int(math.ceil(box.h / resolution - 1e-9)))
    u = (np.arange(nu) + 0.5) * (box.w / nu) - box.w / 2.0
    v = (np.arange(nv) + 0.5) * (box.h / nv) - box.h / 2.0
    uu, vv = np.meshgrid(u, v, indexing="ij")
    rad = math.radians(box.theta)
    c, s = math.cos(rad), math.sin(rad)
    x = box.cx + c * uu - s * vv
    y = box.cy + s * uu + c * vv
    return np.column_stack([x.ravel(), y.ravel()])
