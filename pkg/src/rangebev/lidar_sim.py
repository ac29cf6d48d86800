"""Ray-casting LiDAR simulator over scenes of cuboids and a ground plane.

One ray is cast per (elevation, azimuth) cell of a regular angular grid from
the sensor origin; each returns the nearest surface hit. Rays are lines, so
spacing between returns on a surface grows linearly with range, which is
what the spacing statistics below measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from rangebev.errors import ConfigError, ParseError
from rangebev.geometry import RotatedBox, canonicalize, points_in_box, rotated_iou
from rangebev.pointcloud_io import (
    Calibration,
    GroundTruthObject,
    PointCloud,
    default_calibration,
    fov_surface_fraction,
    project_bbox2d,
)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + np.arange(n) * step


@dataclass(frozen=True)
class SensorModel:
    """Velodyne HDL-64E-like geometry: 0.09 deg azimuth, 0.4 deg elevation steps."""

    horizontal_resolution: float = 0.09
    vertical_resolution: float = 0.4
    vertical_fov: tuple = (-23.2, 2.0)
    horizontal_fov: tuple = (-45.0, 45.0)
    mount_height: float = 1.73
    max_range: float = 120.0
    range_noise: float = 0.0

    def __post_init__(self):
        if self.horizontal_resolution <= 0 or self.vertical_resolution <= 0:
            raise ConfigError("angular resolutions must be positive")
        if not (self.vertical_fov[0] < self.vertical_fov[1] and self.horizontal_fov[0] < self.horizontal_fov[1]):
            raise ConfigError("field-of-view bounds must be increasing")
        if self.max_range <= 0 or self.range_noise < 0:
            raise ConfigError("max_range must be positive and range_noise non-negative")

    @property
    def azimuths(self) -> np.ndarray:
        return _grid(*self.horizontal_fov, self.horizontal_resolution)

    @property
    def elevations(self) -> np.ndarray:
        return _grid(*self.vertical_fov, self.vertical_resolution)

    @property
    def beam_count(self) -> int:
        return len(self.elevations)

    def ray_directions(self) -> np.ndarray:
        """Unit vectors, shape (beams * azimuths, 3), beam-major."""
        el = np.radians(self.elevations)[:, None]
        az = np.radians(self.azimuths)[None, :]
        d = np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)), axis=-1)
        return d.reshape(-1, 3)


@dataclass(frozen=True)
class Cuboid:
    center: tuple
    dims: tuple  # length (along yaw), width, height
    yaw: float = 0.0
    reflectance: float = 0.5

    def __post_init__(self):
        if min(self.dims) <= 0:
            raise ConfigError(f"cuboid dimensions must be positive, got {self.dims}")
        if not 0.0 <= self.reflectance <= 1.0:
            raise ConfigError(f"reflectance must lie in [0, 1], got {self.reflectance}")

    @property
    def bev_box(self) -> RotatedBox:
        return canonicalize(RotatedBox(self.center[0], self.center[1], self.dims[0], self.dims[1], self.yaw))

    def moved_to(self, x: float, y: Optional[float] = None) -> "Cuboid":
        return Cuboid((x, self.center[1] if y is None else y, self.center[2]), self.dims, self.yaw, self.reflectance)


@dataclass(frozen=True)
class Ground:
    z: float = -1.73
    reflectance: float = 0.2


@dataclass(frozen=True)
class Scene:
    cuboids: tuple = ()
    ground: Optional[Ground] = None

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        try:
            cuboids = tuple(
                Cuboid(tuple(map(float, c["center"])), tuple(map(float, c["dims"])), float(c.get("yaw", 0.0)),
                       float(c.get("reflectance", 0.5)))
                for c in data.get("cuboids", [])
            )
            g = data.get("ground")
            ground = None if g is None else Ground(float(g.get("z", -1.73)), float(g.get("reflectance", 0.2)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid scene description: {exc}") from exc
        for c in cuboids:
            if len(c.center) != 3 or len(c.dims) != 3:
                raise ParseError("cuboid center and dims need three values each")
        return cls(cuboids, ground)

    def to_dict(self) -> dict:
        return {
            "ground": None if self.ground is None else {"z": self.ground.z, "reflectance": self.ground.reflectance},
            "cuboids": [{"center": list(c.center), "dims": list(c.dims), "yaw": c.yaw,
                         "reflectance": c.reflectance} for c in self.cuboids],
        }


def load_scenes(text: str) -> list:
    """Scenes of a JSON scene file: a single scene object or ``{"frames": [scene, ...]}``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scene file is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("scene file must hold a JSON object")
    if "frames" in data:
        return [Scene.from_dict(f) for f in data["frames"]]
    return [Scene.from_dict(data)]


def _ray_box_distance(dirs: np.ndarray, cub: Cuboid) -> np.ndarray:
    """Entry distance along each ray into the cuboid, inf when missed (slab test)."""
    t = math.radians(cub.yaw)
    c, s = math.cos(t), math.sin(t)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box frame
    origin = rot @ -np.asarray(cub.center, dtype=float)
    d = dirs @ rot.T
    half = np.asarray(cub.dims, dtype=float) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin) / d
        t2 = (half - origin) / d
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


class ScanResult(NamedTuple):
    cloud: PointCloud
    objects: list


def _occlusion_level(visible_fraction: float) -> int:
    if visible_fraction >= 0.8:
        return 0
    if visible_fraction >= 0.4:
        return 1
    if visible_fraction > 0.0:
        return 2
    return 3


def simulate_scan(scene: Scene, sensor: SensorModel = SensorModel(), seed: int = 0,
                  calibration: Optional[Calibration] = None, frame_id: str = "") -> ScanResult:
    """Cast every ray of the sensor grid into the scene.

    Returns the first-hit point cloud (ordered by beam, then azimuth) and one
    ground-truth object per cuboid. Occlusion levels come from the share of
    a cuboid's rays that reach it first; truncation is the part of its
    footprint outside the camera view.
    """
    calibration = default_calibration() if calibration is None else calibration
    dirs = sensor.ray_directions()
    best = np.full(len(dirs), np.inf)
    refl = np.zeros(len(dirs))
    owner = np.full(len(dirs), -1)
    own_hits = []
    if scene.ground is not None:
        with np.errstate(divide="ignore"):
            tg = np.where(dirs[:, 2] < 0, scene.ground.z / dirs[:, 2], np.inf)
        tg = np.where(tg > 0, tg, np.inf)
        closer = tg < best
        best[closer], refl[closer] = tg[closer], scene.ground.reflectance
    for k, cub in enumerate(scene.cuboids):
        tk = _ray_box_distance(dirs, cub)
        tk = np.where(tk <= sensor.max_range, tk, np.inf)
        own_hits.append(int(np.isfinite(tk).sum()))
        closer = tk < best
        best[closer], refl[closer], owner[closer] = tk[closer], cub.reflectance, k
    hit = best <= sensor.max_range
    dist = best[hit]
    if sensor.range_noise > 0:
        dist = dist + np.random.default_rng(seed).normal(0.0, sensor.range_noise, len(dist))
    pts = dirs[hit] * dist[:, None]
    cloud = PointCloud(np.column_stack([pts, refl[hit]]), frame_id)

    objects = []
    owner_hit = owner[hit]
    for k, cub in enumerate(scene.cuboids):
        box = cub.bev_box
        first = int((owner_hit == k).sum())
        visible = first / own_hits[k] if own_hits[k] else 0.0
        obj = GroundTruthObject(box, z_center=cub.center[2], z_height=cub.dims[2])
        left, top, right, bottom = project_bbox2d(obj, calibration)
        truncation = 1.0 - fov_surface_fraction(box, calibration)
        objects.append(GroundTruthObject(box, cub.center[2], cub.dims[2], bottom - top,
                                         _occlusion_level(visible), truncation))
    return ScanResult(cloud, objects)


# ---------------------------------------------------------------------------
# spacing analysis


class SpacingStats(NamedTuple):
    point_count: int
    median_horizontal_gap: Optional[float]
    median_vertical_gap: Optional[float]


def _adjacent_gaps(xyz, major, minor):
    """Distances between points sharing ``major`` whose ``minor`` indices differ by one."""
    if len(xyz) < 2:
        return np.zeros(0)
    order = np.lexsort((minor, major))
    same = major[order][1:] == major[order][:-1]
    step = np.diff(minor[order]) == 1
    pair = same & step
    a, b = xyz[order][:-1][pair], xyz[order][1:][pair]
    return np.linalg.norm(b - a, axis=1)


SURFACE_MARGIN = 0.01


def spacing_stats(cloud: PointCloud, box: RotatedBox, sensor: SensorModel = SensorModel(),
                  z_min: Optional[float] = None, z_max: Optional[float] = None) -> SpacingStats:
    """Point count inside a BEV footprint and median gaps between angularly adjacent returns.

    Returns are assigned back to their (beam, azimuth) grid cell from their
    direction, so horizontal gaps pair neighbours on the same beam and
    vertical gaps neighbours on the same azimuth. ``z_min``/``z_max`` bound
    the heights considered, e.g. to leave out ground returns.
    """
    pts = cloud.points
    # surface returns sit on the footprint boundary; a small margin absorbs rounding
    grown = RotatedBox(box.cx, box.cy, box.w + 2 * SURFACE_MARGIN, box.h + 2 * SURFACE_MARGIN, box.theta)
    mask = points_in_box(pts[:, :2], grown) if len(pts) else np.zeros(0, dtype=bool)
    if z_min is not None:
        mask &= pts[:, 2] >= z_min
    if z_max is not None:
        mask &= pts[:, 2] <= z_max
    xyz = pts[mask, :3]
    if not len(xyz):
        return SpacingStats(0, None, None)
    az = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    el = np.degrees(np.arctan2(xyz[:, 2], np.hypot(xyz[:, 0], xyz[:, 1])))
    ia = np.rint((az - sensor.horizontal_fov[0]) / sensor.horizontal_resolution).astype(np.int64)
    ie = np.rint((el - sensor.vertical_fov[0]) / sensor.vertical_resolution).astype(np.int64)
    hgaps = _adjacent_gaps(xyz, ie, ia)
    vgaps = _adjacent_gaps(xyz, ia, ie)
    return SpacingStats(
        int(len(xyz)),
        float(np.median(hgaps)) if len(hgaps) else None,
        float(np.median(vgaps)) if len(vgaps) else None,
    )


def distance_sweep(target: Cuboid, distances: Sequence[float], sensor: SensorModel = SensorModel(),
                   ground: Optional[Ground] = Ground(), seed: int = 0) -> list:
    """Spacing statistics of ``target`` re-placed at each longitudinal distance."""
    rows = []
    for d in distances:
        cub = target.moved_to(float(d))
        result = simulate_scan(Scene((cub,), ground), sensor, seed)
        z_min = None if ground is None else ground.z + 0.05
        rows.append((float(d), spacing_stats(result.cloud, cub.bev_box, sensor, z_min=z_min)))
    return rows


CAR_DIMS = (4.5, 2.0, 1.6)


def car_cuboid(x: float, y: float = 0.0, yaw: float = 0.0, dims=CAR_DIMS, reflectance: float = 0.6,
               ground_z: float = -1.73) -> Cuboid:
    return Cuboid((x, y, ground_z + dims[2] / 2.0), tuple(dims), yaw, reflectance)


def random_scene(rng: np.random.Generator, n_cars: int = 8, x_range=(4.0, 68.0), fov_deg: float = 38.0,
                 ground: Optional[Ground] = Ground(), max_tries: int = 200) -> Scene:
    """Cars scattered in front of the sensor without overlapping footprints."""
    cars = []
    tries = 0
    while len(cars) < n_cars and tries < max_tries:
        tries += 1
        x = rng.uniform(*x_range)
        y = x * math.tan(math.radians(rng.uniform(-fov_deg, fov_deg)))
        dims = (rng.uniform(3.6, 4.8), rng.uniform(1.6, 2.0), rng.uniform(1.4, 1.7))
        cub = car_cuboid(x, y, rng.uniform(-180, 180), dims, float(rng.uniform(0.2, 0.9)),
                         ground.z if ground else -1.73)
        grown = RotatedBox(cub.bev_box.cx, cub.bev_box.cy, cub.bev_box.w + 1.0, cub.bev_box.h + 1.0, cub.bev_box.theta)
        if all(rotated_iou(grown, c.bev_box) == 0.0 for c in cars):
            cars.append(cub)
    return Scene(tuple(cars), ground)
