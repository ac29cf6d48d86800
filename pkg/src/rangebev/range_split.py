"""Splitting frames between a near-range and a far-range detector and merging their output.

Training: objects are assigned by the radial distance of their center, and
each network sees a BEV image masked to its own radial band. The bands
overlap between ``outside_mask_min`` and ``inside_mask_max`` so objects near
the threshold are not cut off.

Inference: the evaluation area is halved along the longitudinal axis; the
near network owns ``cx < inference_boundary``, the far network the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from rangebev.bev import BevGrid, BevImage, Encoding, RasterParams, rasterize
from rangebev.errors import ConfigError, ParseError, UndefinedResultError
from rangebev.geometry import RotatedBox
from rangebev.pointcloud_io import PointCloud


@dataclass(frozen=True)
class RangeSplitParams:
    label_threshold: float = 25.0
    inside_mask_max: float = 30.0
    outside_mask_min: float = 25.0
    inference_boundary: float = 35.0

    def __post_init__(self):
        if not self.outside_mask_min <= self.label_threshold <= self.inside_mask_max:
            raise ConfigError("range split needs outside_mask_min <= label_threshold <= inside_mask_max")


def assign_objects(gts: Sequence, p: RangeSplitParams = RangeSplitParams()):
    """Partition objects into (inside, outside) by radial center distance; ties go outside."""
    inside, outside = [], []
    for gt in gts:
        box = getattr(gt, "box", gt)
        (inside if box.range < p.label_threshold else outside).append(gt)
    return inside, outside


def radial_keep_mask(grid: BevGrid, r_min: Optional[float], r_max: Optional[float]) -> np.ndarray:
    if r_min is not None and r_max is not None and r_min >= r_max:
        raise ConfigError(f"empty radial band [{r_min}, {r_max})")
    r = grid.cell_radius()
    keep = np.ones(grid.shape, dtype=bool)
    if r_min is not None:
        keep &= r >= r_min
    if r_max is not None:
        keep &= r < r_max
    return keep


def mask_bev(image: BevImage, r_min: Optional[float] = None, r_max: Optional[float] = None) -> BevImage:
    """Zero every pixel whose cell center lies outside the radial band [r_min, r_max)."""
    keep = radial_keep_mask(image.grid, r_min, r_max)
    values = image.values.copy()
    values[~keep] = 0.0
    return image.copy(values)


@dataclass
class Frame:
    cloud: PointCloud
    gts: list = field(default_factory=list)
    frame_id: str = ""


class Sample(NamedTuple):
    image: BevImage
    labels: list


def split_frame(frame: Frame, p: RangeSplitParams = RangeSplitParams(), encoding=Encoding.MAX_HEIGHT_3,
                grid: BevGrid = BevGrid(), fov: Optional[np.ndarray] = None,
                raster: RasterParams = RasterParams()):
    """Build the (inside, outside) training samples of one frame."""
    image = rasterize(frame.cloud, encoding, grid, fov, raster)
    inside_labels, outside_labels = assign_objects(frame.gts, p)
    inside = Sample(mask_bev(image, None, p.inside_mask_max), inside_labels)
    outside = Sample(mask_bev(image, p.outside_mask_min, None), outside_labels)
    return inside, outside


def merge_detections(inside_dets: Sequence[RotatedBox], outside_dets: Sequence[RotatedBox],
                     p: RangeSplitParams = RangeSplitParams()) -> list:
    """Near detections ahead of the boundary plus far detections beyond it, without cross NMS."""
    near = [d for d in inside_dets if d.cx < p.inference_boundary]
    far = [d for d in outside_dets if d.cx >= p.inference_boundary]
    return near + far


def weighted_map(ap_near, n_near: int, ap_far, n_far: int) -> float:
    """GT-count weighted mean of the near and far AP.

    An AP whose GT count is zero carries no weight and may be None.
    """
    if n_near < 0 or n_far < 0:
        raise ValueError("GT counts must be non-negative")
    if n_near + n_far == 0:
        raise UndefinedResultError("weighted mAP is undefined without any ground truth")
    total = 0.0
    if n_near:
        total += n_near * ap_near
    if n_far:
        total += n_far * ap_far
    return total / (n_near + n_far)


def implied_near_weight(ap_near: float, ap_far: float, ap_combined: float) -> float:
    """The near-range weight w with ``w * ap_near + (1 - w) * ap_far == ap_combined``."""
    if ap_near == ap_far:
        raise UndefinedResultError("equal range APs do not determine a weight")
    return (ap_combined - ap_far) / (ap_near - ap_far)


# ---------------------------------------------------------------------------
# detection interchange: "frame_id cx cy w h theta confidence" per line


def format_detection(frame_id: str, box: RotatedBox) -> str:
    conf = 0.0 if box.confidence is None else box.confidence
    return f"{frame_id} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f} {box.theta:.6f} {conf:.6f}"


def write_detections(dets) -> str:
    """Serialize ``{frame_id: [box, ...]}`` (or an iterable of (frame_id, box) pairs)."""
    items = dets.items() if hasattr(dets, "items") else _group(dets).items()
    return "".join(format_detection(fid, b) + "\n" for fid, boxes in items for b in boxes)


def _group(pairs) -> dict:
    out: dict = {}
    for fid, box in pairs:
        out.setdefault(fid, []).append(box)
    return out


def read_detections(text: str) -> dict:
    """Parse a detection file into ``{frame_id: [box, ...]}`` in file order."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(f"expected 7 fields, got {len(parts)}", line=lineno)
        try:
            cx, cy, w, h, theta, conf = map(float, parts[1:])
            box = RotatedBox(cx, cy, w, h, theta, confidence=conf)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        out.setdefault(parts[0], []).append(box)
    return out


def merge_detection_sets(inside: dict, outside: dict, p: RangeSplitParams = RangeSplitParams()) -> dict:
    frames = list(inside) + [f for f in outside if f not in inside]
    merged = {}
    for fid in frames:
        boxes = merge_detections(inside.get(fid, []), outside.get(fid, []), p)
        if boxes:
            merged[fid] = boxes
    return merged
