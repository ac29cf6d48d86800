"""KITTI-format ingestion: velodyne scans, object labels and calibration files.

Sensor frame: x forward, y left, z up with the origin at the LiDAR.
Labels live in the rectified camera frame (x right, y down, z forward) and
are converted to BEV boxes in the sensor frame on load.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from rangebev.errors import ConfigError, ParseError
from rangebev.geometry import RotatedBox, box_sample_points, canonicalize

log = logging.getLogger(__name__)

RECORD_BYTES = 16
_RECORD = np.dtype("<f4")


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float


@dataclass
class PointCloud:
    """Points as an (N, 4) float64 array of x, y, z, intensity."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    frame_id: str = ""
    dropped: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        self.points = pts

    @classmethod
    def from_points(cls, points: Sequence, frame_id: str = "") -> "PointCloud":
        return cls(np.array([tuple(p) for p in points], dtype=np.float64).reshape(-1, 4), frame_id)

    def __len__(self):
        return len(self.points)

    def __iter__(self) -> Iterator[Point]:
        for row in self.points:
            yield Point(*map(float, row))

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask], self.frame_id)


def read_point_cloud(data: bytes, frame_id: str = "") -> PointCloud:
    """Decode a packed float32 (x, y, z, intensity) little-endian scan.

    Records containing NaN or inf are dropped; their number is kept in
    ``PointCloud.dropped``.
    """
    if len(data) % RECORD_BYTES:
        offset = len(data) - len(data) % RECORD_BYTES
        raise ParseError("truncated point record", offset=offset)
    raw = np.frombuffer(data, dtype=_RECORD).reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(raw).all(axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.warning("dropped %d non-finite point records from %r", dropped, frame_id or "<bytes>")
    return PointCloud(raw[finite], frame_id, dropped)


def write_point_cloud(cloud: PointCloud) -> bytes:
    return cloud.points.astype(_RECORD).tobytes()


def load_point_cloud(path) -> PointCloud:
    from pathlib import Path

    path = Path(path)
    return read_point_cloud(path.read_bytes(), path.stem)


@dataclass(frozen=True)
class CropBounds:
    # 0..70 m ahead, +-35 m lateral, road at -1.73 m below the sensor
    x_range: tuple = (0.0, 70.0)
    y_range: tuple = (-35.0, 35.0)
    z_range: tuple = (-1.73, 1.27)

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name} must satisfy min < max, got {(lo, hi)}")

    def intersect(self, other: "CropBounds") -> "CropBounds":
        def both(a, b):
            return (max(a[0], b[0]), min(a[1], b[1]))

        return CropBounds(both(self.x_range, other.x_range), both(self.y_range, other.y_range),
                          both(self.z_range, other.z_range))


def crop_mask(xyz: np.ndarray, bounds: CropBounds) -> np.ndarray:
    (x0, x1), (y0, y1), (z0, z1) = bounds.x_range, bounds.y_range, bounds.z_range
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return (x >= x0) & (x < x1) & (y >= y0) & (y < y1) & (z >= z0) & (z < z1)


def crop_filter(cloud: PointCloud, bounds: CropBounds = CropBounds()) -> PointCloud:
    """Keep points inside the half-open crop box, preserving order."""
    return cloud.subset(crop_mask(cloud.xyz, bounds))


# ---------------------------------------------------------------------------
# calibration

_CALIB_SHAPES = {"R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4), "P2": (3, 4)}


@dataclass
class Calibration:
    """Camera/LiDAR calibration of one frame.

    ``extra`` keeps every other matrix of the calib file (P0, Tr_imu_to_velo,
    ...) in file order so a parsed file can be written back unchanged.
    """

    sensor_to_camera: np.ndarray
    rectification: np.ndarray
    camera_projection: np.ndarray
    image_size: tuple = (1242, 375)
    key_order: tuple = ("P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam", "Tr_imu_to_velo")
    extra: dict = field(default_factory=dict)
    orthonormal_tol: float = 1e-6

    def __post_init__(self):
        self.sensor_to_camera = np.asarray(self.sensor_to_camera, dtype=float).reshape(3, 4)
        self.rectification = np.asarray(self.rectification, dtype=float).reshape(3, 3)
        self.camera_projection = np.asarray(self.camera_projection, dtype=float).reshape(3, 4)
        for name, rot in (("Tr_velo_to_cam", self.sensor_to_camera[:, :3]), ("R0_rect", self.rectification)):
            err = np.abs(rot @ rot.T - np.eye(3)).max()
            if err > self.orthonormal_tol:
                raise ConfigError(f"{name} rotation is not orthonormal (max error {err:.2e})")

    def sensor_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        cam = xyz @ self.sensor_to_camera[:, :3].T + self.sensor_to_camera[:, 3]
        return cam @ self.rectification.T

    def rect_to_sensor(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        cam = xyz @ self.rectification  # R^T applied to row vectors
        return (cam - self.sensor_to_camera[:, 3]) @ self.sensor_to_camera[:, :3]

    def project_rect(self, xyz_rect: np.ndarray):
        """Image coordinates (N, 2) and depth (N,) of rectified-camera points."""
        xyz_rect = np.atleast_2d(xyz_rect)
        hom = np.hstack([xyz_rect, np.ones((len(xyz_rect), 1))]) @ self.camera_projection.T
        depth = xyz_rect[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = hom[:, :2] / hom[:, 2:3]
        return uv, depth

    def in_image(self, xyz: np.ndarray) -> np.ndarray:
        """Which sensor-frame points project inside the image with positive depth."""
        uv, depth = self.project_rect(self.sensor_to_rect(xyz))
        width, height = self.image_size
        ok = depth > 0
        ok &= (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
        return ok


def default_calibration() -> Calibration:
    """A KITTI-like rig: camera 0.27 m behind and 0.08 m below the LiDAR, 721.5 px focal length."""
    tr = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, -0.08], [1.0, 0.0, 0.0, -0.27]])
    p2 = np.array([[721.5377, 0.0, 609.5593, 44.85728], [0.0, 721.5377, 172.854, 0.2163791],
                   [0.0, 0.0, 1.0, 0.002745884]])
    return Calibration(tr, np.eye(3), p2)


def read_calibration(text: str, image_size=(1242, 375)) -> Calibration:
    mats = {}
    order = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ParseError(f"expected 'NAME: values', got {line!r}", line=lineno)
        try:
            values = np.array([float(v) for v in rest.split()])
        except ValueError as exc:
            raise ParseError(f"non-numeric calibration value in {key!r}", line=lineno) from exc
        key = key.strip()
        order.append(key)
        mats[key] = values
    for key, shape in _CALIB_SHAPES.items():
        if key not in mats:
            raise ParseError(f"calibration is missing {key}")
        if mats[key].size != shape[0] * shape[1]:
            raise ParseError(f"{key} needs {shape[0] * shape[1]} values, got {mats[key].size}")
    extra = {k: v for k, v in mats.items() if k not in _CALIB_SHAPES}
    return Calibration(mats["Tr_velo_to_cam"], mats["R0_rect"], mats["P2"], tuple(image_size),
                       key_order=tuple(order), extra=extra)


def write_calibration(calib: Calibration) -> str:
    known = {"P2": calib.camera_projection, "R0_rect": calib.rectification, "Tr_velo_to_cam": calib.sensor_to_camera}
    keys = [k for k in calib.key_order if k in known or k in calib.extra]
    keys += [k for k in known if k not in keys]
    lines = []
    for key in keys:
        values = known[key] if key in known else calib.extra[key]
        lines.append(f"{key}: " + " ".join(f"{v:.12e}" for v in np.ravel(values)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple  # left, top, right, bottom in pixels
    dimensions: tuple  # height, width, length in meters
    location: tuple  # bottom-center x, y, z in the rectified camera frame
    rotation_y: float
    score: Optional[float] = None


def parse_label_line(line: str, lineno: int = 0) -> KittiLabel:
    parts = line.split()
    if len(parts) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(parts)}", line=lineno)
    try:
        nums = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise ParseError(f"non-numeric label field: {exc}", line=lineno) from exc
    return KittiLabel(
        type=parts[0],
        truncated=nums[0],
        occluded=int(nums[1]),
        alpha=nums[2],
        bbox=tuple(nums[3:7]),
        dimensions=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )


def format_label_line(label: KittiLabel) -> str:
    fields = [label.type, f"{label.truncated:.2f}", str(int(label.occluded)), f"{label.alpha:.2f}"]
    fields += [f"{v:.2f}" for v in (*label.bbox, *label.dimensions, *label.location, label.rotation_y)]
    if label.score is not None:
        fields.append(f"{label.score:.2f}")
    return " ".join(fields)


def parse_labels(text: str) -> list:
    return [parse_label_line(line, n) for n, line in enumerate(text.splitlines(), 1) if line.strip()]


def format_labels(labels: Sequence[KittiLabel]) -> str:
    return "".join(format_label_line(label) + "\n" for label in labels)


@dataclass(frozen=True)
class GroundTruthObject:
    box: RotatedBox
    z_center: float = 0.0
    z_height: float = 1.5
    bbox2d_height: float = 0.0
    occlusion: int = 0
    truncation: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"truncation must lie in [0, 1], got {self.truncation}")


def _wrap_pi(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def label_to_object(label: KittiLabel, calib: Calibration) -> GroundTruthObject:
    h, w, l = label.dimensions
    bottom = calib.rect_to_sensor(np.array(label.location))[0]
    yaw = -math.degrees(label.rotation_y) - 90.0
    box = canonicalize(RotatedBox(float(bottom[0]), float(bottom[1]), l, w, yaw))
    left, top, right, btm = label.bbox
    return GroundTruthObject(
        box=box,
        z_center=float(bottom[2]) + h / 2.0,
        z_height=h,
        bbox2d_height=btm - top,
        occlusion=label.occluded,
        truncation=min(1.0, max(0.0, label.truncated)),
    )


def cuboid_corners(obj: GroundTruthObject) -> np.ndarray:
    """The eight sensor-frame corners of an object's 3D box, shape (8, 3)."""
    b = obj.box
    t = math.radians(b.theta)
    c, s = math.cos(t), math.sin(t)
    out = []
    for du in (-b.w / 2, b.w / 2):
        for dv in (-b.h / 2, b.h / 2):
            for dz in (-obj.z_height / 2, obj.z_height / 2):
                out.append((b.cx + c * du - s * dv, b.cy + s * du + c * dv, obj.z_center + dz))
    return np.array(out)


def project_bbox2d(obj: GroundTruthObject, calib: Calibration) -> tuple:
    """Image-plane bounding box (left, top, right, bottom) clipped to the image; zeros if unseen."""
    rect = calib.sensor_to_rect(cuboid_corners(obj))
    front = rect[:, 2] > 0.1
    if not front.any():
        return (0.0, 0.0, 0.0, 0.0)
    uv, _ = calib.project_rect(rect[front])
    width, height = calib.image_size
    left = float(np.clip(uv[:, 0].min(), 0, width - 1))
    right = float(np.clip(uv[:, 0].max(), 0, width - 1))
    top = float(np.clip(uv[:, 1].min(), 0, height - 1))
    bottom = float(np.clip(uv[:, 1].max(), 0, height - 1))
    return (left, top, right, bottom)


def object_to_label(obj: GroundTruthObject, calib: Calibration, bbox: Optional[tuple] = None) -> KittiLabel:
    b = obj.box
    bottom = np.array([b.cx, b.cy, obj.z_center - obj.z_height / 2.0])
    loc = calib.sensor_to_rect(bottom)[0]
    ry = _wrap_pi(math.radians(-b.theta - 90.0))
    alpha = _wrap_pi(ry - math.atan2(loc[0], loc[2]))
    if bbox is None:
        bbox = project_bbox2d(obj, calib)
    return KittiLabel(
        type="Car",
        truncated=obj.truncation,
        occluded=obj.occlusion,
        alpha=alpha,
        bbox=tuple(bbox),
        dimensions=(obj.z_height, b.h, b.w),
        location=tuple(float(v) for v in loc),
        rotation_y=ry,
    )


def read_labels(text: str, calibration: Optional[Calibration]) -> list:
    """Car objects of a KITTI label file as sensor-frame ground truth."""
    if calibration is None:
        raise ConfigError("label conversion needs a calibration")
    return [label_to_object(lab, calibration) for lab in parse_labels(text) if lab.type == "Car"]


def dont_care_regions(text: str) -> list:
    """Image-plane boxes of the DontCare entries of a label file."""
    return [lab.bbox for lab in parse_labels(text) if lab.type == "DontCare"]


def write_labels(objects: Sequence[GroundTruthObject], calibration: Calibration) -> str:
    return format_labels([object_to_label(obj, calibration) for obj in objects])


# ---------------------------------------------------------------------------
# field of view


def in_fov(xy: np.ndarray, calibration: Optional[Calibration] = None, *, z: float = 0.0,
           wedge_deg: float = 45.0) -> np.ndarray:
    """Visibility of BEV points (N, 2) to the front camera.

    With a calibration, points lifted to height ``z`` must project inside the
    image with positive depth. Without one, a symmetric wedge of
    ``wedge_deg`` around the forward axis stands in for the camera.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    if calibration is None:
        ang = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))
        return (xy[:, 0] > 0) & (np.abs(ang) <= wedge_deg)
    xyz = np.column_stack([xy, np.full(len(xy), z)])
    return calibration.in_image(xyz)


def fov_surface_fraction(box: RotatedBox, calibration: Optional[Calibration] = None,
                         raster_resolution: float = 0.1, *, z: float = 0.0, wedge_deg: float = 45.0) -> float:
    """Fraction of the box footprint that the front camera sees."""
    samples = box_sample_points(box, raster_resolution)
    return float(in_fov(samples, calibration, z=z, wedge_deg=wedge_deg).mean())


def fov_filter(objects: Sequence[GroundTruthObject], calibration: Optional[Calibration] = None,
               raster_resolution: float = 0.1, min_fraction: float = 0.5, **kwargs) -> list:
    """Objects with at least ``min_fraction`` of their surface inside the camera FOV."""
    return [o for o in objects
            if fov_surface_fraction(o.box, calibration, raster_resolution, **kwargs) >= min_fraction]
