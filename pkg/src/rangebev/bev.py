"""Bird's-eye-view rasterization of LiDAR scans.

The grid puts the sensor at the bottom center of the image: row 0 is the far
edge (x just below 70 m), column 0 the left edge (y just below 35 m).
Every cell covers a half-open square ``[x0, x0 + res) x [y0, y0 + res)``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from rangebev.errors import ConfigError, ParseError
from rangebev.pointcloud_io import Calibration, Point, PointCloud, in_fov

# slice cut points of the three-channel encodings; the top slice ends at the crop top
HEIGHT_SLICES_3 = (-1.73, -0.73, 0.23, 1.27)
DENSITY_NORM = 64.0


class Encoding(str, enum.Enum):
    MAX_HEIGHT_3 = "max_height"
    BINARY = "binary"
    MULTI_HEIGHT_9 = "multi_height"
    HEIGHT_INTENSITY_DENSITY = "height_intensity_density"

    @classmethod
    def parse(cls, value) -> "Encoding":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(e.value for e in cls)
            raise ConfigError(f"unknown encoding {value!r}; expected one of {names}") from None

    @property
    def channels(self) -> int:
        return 9 if self is Encoding.MULTI_HEIGHT_9 else 3


@dataclass(frozen=True)
class BevGrid:
    x_range: tuple = (0.0, 70.0)
    y_range: tuple = (-35.0, 35.0)
    resolution: float = 0.1

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError("grid resolution must be positive")
        for name in ("x_range", "y_range"):
            lo, hi = getattr(self, name)
            cells = (hi - lo) / self.resolution
            if not lo < hi or abs(cells - round(cells)) > 1e-6:
                raise ConfigError(f"{name} {(lo, hi)} is not a whole number of {self.resolution} m cells")

    @property
    def rows(self) -> int:
        return int(round((self.x_range[1] - self.x_range[0]) / self.resolution))

    @property
    def cols(self) -> int:
        return int(round((self.y_range[1] - self.y_range[0]) / self.resolution))

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    def pixels(self, xy: np.ndarray):
        """Vectorized mapping of (N, 2) points to (rows, cols, inside-grid mask)."""
        xy = np.asarray(xy, dtype=float)
        rows = np.ceil((self.x_range[1] - xy[:, 0]) / self.resolution) - 1
        cols = np.ceil((self.y_range[1] - xy[:, 1]) / self.resolution) - 1
        ok = (rows >= 0) & (rows < self.rows) & (cols >= 0) & (cols < self.cols)
        ok &= np.isfinite(rows) & np.isfinite(cols)
        rows = np.where(ok, rows, 0).astype(np.int64)
        cols = np.where(ok, cols, 0).astype(np.int64)
        return rows, cols, ok

    def cell_centers(self):
        """x and y of every cell center, each shaped (rows, cols)."""
        x = self.x_range[1] - (np.arange(self.rows) + 0.5) * self.resolution
        y = self.y_range[1] - (np.arange(self.cols) + 0.5) * self.resolution
        return np.meshgrid(x, y, indexing="ij")

    def cell_radius(self) -> np.ndarray:
        x, y = self.cell_centers()
        return np.hypot(x, y)


def point_to_pixel(p: Point, grid: BevGrid = BevGrid()) -> Optional[tuple]:
    """(row, col) of the cell holding ``p``, or None when it falls off the grid."""
    rows, cols, ok = grid.pixels(np.array([[p[0], p[1]]]))
    if not ok[0]:
        return None
    return int(rows[0]), int(cols[0])


def fov_mask(grid: BevGrid = BevGrid(), calibration: Optional[Calibration] = None, *,
             wedge_deg: float = 45.0, z: float = 0.0) -> np.ndarray:
    """Cells whose center the front camera sees."""
    x, y = grid.cell_centers()
    visible = in_fov(np.column_stack([x.ravel(), y.ravel()]), calibration, z=z, wedge_deg=wedge_deg)
    return visible.reshape(grid.shape)


@dataclass
class BevImage:
    grid: BevGrid
    encoding: Encoding
    values: np.ndarray  # (rows, cols, channels) float32 in [0, 100]
    fov_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.fov_mask is None:
            self.fov_mask = np.ones(self.grid.shape, dtype=bool)

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def copy(self, values=None) -> "BevImage":
        return BevImage(self.grid, self.encoding, self.values.copy() if values is None else values,
                        self.fov_mask.copy())


@dataclass(frozen=True)
class RasterParams:
    z_range: tuple = (-1.73, 1.27)
    height_slices: tuple = HEIGHT_SLICES_3
    multi_slices: int = 9
    density_norm: float = DENSITY_NORM

    def slice_edges(self, encoding: Encoding) -> np.ndarray:
        if encoding is Encoding.MULTI_HEIGHT_9:
            return np.linspace(self.z_range[0], self.z_range[1], self.multi_slices + 1)
        return np.asarray(self.height_slices, dtype=float)


def _group_last(keys, *sort_keys):
    """Index of the last element of each run of ``keys`` after sorting by (keys, *sort_keys).

    Which of several fully tied elements wins is unspecified; callers only
    read values that are equal across such ties. The secondary keys are folded
    into a rank so one integer argsort does the work of a multi-key lexsort.
    """
    n = len(keys)
    if sort_keys:
        sub = (np.argsort(sort_keys[0]) if len(sort_keys) == 1
               else np.lexsort(tuple(reversed(sort_keys))))
        rank = np.empty(n, dtype=np.int64)
        rank[sub] = np.arange(n)
    else:
        rank = np.arange(n, dtype=np.int64)
    order = np.argsort(keys.astype(np.int64) * n + rank)
    ks = keys[order]
    last = np.flatnonzero(np.append(ks[1:] != ks[:-1], True))
    return order[last]


def rasterize(cloud: PointCloud, encoding, grid: BevGrid = BevGrid(), fov: Optional[np.ndarray] = None,
              params: RasterParams = RasterParams()) -> BevImage:
    """Encode a cropped scan as a multichannel BEV image.

    ``max_height``: highest point per height slice, rescaled to 0..100 within
    the slice. ``binary``: 100 where a slice holds any point. ``multi_height``:
    as ``max_height`` over nine equal slices. ``height_intensity_density``:
    column max height, the intensity of that highest point (larger intensity
    wins a height tie), and log point density saturating at
    ``density_norm`` points. Cells outside ``fov`` are zero.
    """
    encoding = Encoding.parse(encoding)
    n_cells = grid.rows * grid.cols
    pts = cloud.points
    rows, cols, ok = grid.pixels(pts[:, :2])
    z0, z1 = params.z_range
    ok &= (pts[:, 2] >= z0) & (pts[:, 2] < z1)
    flat = (rows * grid.cols + cols)[ok]
    z = pts[ok, 2]
    inten = pts[ok, 3]

    if encoding is Encoding.HEIGHT_INTENSITY_DENSITY:
        out = np.zeros((n_cells, 3), dtype=np.float32)
        if len(flat):
            top = _group_last(flat, z, inten)
            cells = flat[top]
            count = np.bincount(flat, minlength=n_cells)[cells]
            out[cells, 0] = np.clip(100.0 * (z[top] - z0) / (z1 - z0), 0.0, 100.0)
            out[cells, 1] = 100.0 * np.clip(inten[top], 0.0, 1.0)
            out[cells, 2] = 100.0 * np.minimum(1.0, np.log1p(count) / math.log(params.density_norm))
    else:
        edges = params.slice_edges(encoding)
        n = len(edges) - 1
        k = np.searchsorted(edges, z, side="right") - 1
        inside = (k >= 0) & (k < n)
        keys = flat[inside] * n + k[inside]
        zs = z[inside]
        out = np.zeros(n_cells * n, dtype=np.float32)
        if len(keys):
            top = _group_last(keys, zs)
            slot = keys[top]
            if encoding is Encoding.BINARY:
                out[slot] = 100.0
            else:
                lo, hi = edges[slot % n], edges[slot % n + 1]
                out[slot] = np.clip(100.0 * (zs[top] - lo) / (hi - lo), 0.0, 100.0)

    values = out.reshape(grid.rows, grid.cols, -1)
    mask = np.ones(grid.shape, dtype=bool) if fov is None else np.asarray(fov, dtype=bool)
    if mask.shape != grid.shape:
        raise ConfigError(f"FOV mask shape {mask.shape} does not match grid {grid.shape}")
    values[~mask] = 0.0
    return BevImage(grid, encoding, values, mask.copy())


def to_rgb(image: BevImage) -> np.ndarray:
    """8-bit RGB view; nine-channel images collapse to gray by per-pixel max."""
    vals = image.values
    if vals.shape[2] != 3:
        vals = np.repeat(vals.max(axis=2, keepdims=True), 3, axis=2)
    return np.rint(vals.astype(np.float64) * 255.0 / 100.0).clip(0, 255).astype(np.uint8)


def encode_png(rgb: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def render_png(image: BevImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(to_rgb(image)))


_RASTER_HEADER = struct.Struct("<3I")


def dump_raster(image: BevImage) -> bytes:
    """Header (rows, cols, channels as uint32 LE) then row-major float32 LE values."""
    rows, cols, ch = image.values.shape
    return _RASTER_HEADER.pack(rows, cols, ch) + image.values.astype("<f4").tobytes()


def load_raster(data: bytes) -> np.ndarray:
    if len(data) < _RASTER_HEADER.size:
        raise ParseError("raster dump shorter than its header", offset=len(data))
    rows, cols, ch = _RASTER_HEADER.unpack_from(data)
    expected = _RASTER_HEADER.size + 4 * rows * cols * ch
    if len(data) != expected:
        raise ParseError(f"raster dump should be {expected} bytes, got {len(data)}", offset=len(data))
    return np.frombuffer(data, dtype="<f4", offset=_RASTER_HEADER.size).reshape(rows, cols, ch).copy()
