"""Tool configuration: every tunable constant in one table, loadable from JSON.

Config files are JSON objects whose keys are the dotted names below, either
flat (``{"grid.resolution": 0.2}``) or nested (``{"grid": {"resolution": 0.2}}``).
Unknown keys and ill-typed values are rejected before any command runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Optional

from rangebev.bev import BevGrid, Encoding, RasterParams
from rangebev.errors import ConfigError
from rangebev.kitti_eval import EvalConfig
from rangebev.lidar_sim import SensorModel
from rangebev.pointcloud_io import CropBounds
from rangebev.range_split import RangeSplitParams


class Key(NamedTuple):
    name: str
    default: Any
    kind: str  # "float", "int", "str", "pair", "floats", "pairs"
    doc: str


KEYS = (
    # region of interest: 70 m ahead, 35 m to either side, road surface 1.73 m below the sensor
    Key("crop.x_range", (0.0, 70.0), "pair", "longitudinal crop [min, max) in m"),
    Key("crop.y_range", (-35.0, 35.0), "pair", "lateral crop [min, max) in m"),
    Key("crop.z_range", (-1.73, 1.27), "pair", "height crop [min, max) in m"),
    # 0.1 m BEV cells give a 700 x 700 image over the crop
    Key("grid.resolution", 0.1, "float", "BEV cell size in m"),
    Key("raster.encoding", "max_height", "str", "max_height | binary | multi_height | height_intensity_density"),
    Key("raster.height_slices", (-1.73, -0.73, 0.23, 1.27), "floats", "slice edges of the 3-channel encodings"),
    Key("raster.multi_slices", 9, "int", "equal slices of the multi_height encoding"),
    Key("raster.density_norm", 64.0, "float", "point count mapped to full density"),
    Key("fov.source", "calibration", "str", "calibration | wedge | none"),
    Key("fov.wedge_deg", 45.0, "float", "half-angle of the fallback camera wedge"),
    Key("fov.min_fraction", 0.5, "float", "visible surface share keeping a label"),
    # near/far training split with a 25-30 m overlap ring, merged at 35 m
    Key("split.label_threshold", 25.0, "float", "radial distance separating near and far labels"),
    Key("split.inside_mask_max", 30.0, "float", "outer radius of the near image"),
    Key("split.outside_mask_min", 25.0, "float", "inner radius of the far image"),
    Key("split.inference_boundary", 35.0, "float", "longitudinal distance where merged detections switch model"),
    Key("eval.iou_thresholds", (0.7, 0.5), "floats", "BEV IoU thresholds"),
    Key("eval.buckets", ((0.0, 35.0), (35.0, 70.0)), "pairs", "longitudinal range buckets in m"),
    Key("eval.lateral_range", (-35.0, 35.0), "pair", "lateral extent of evaluated boxes"),
    # Velodyne HDL-64E geometry: 0.09 deg azimuth and 0.4 deg elevation steps
    Key("sensor.horizontal_resolution", 0.09, "float", "azimuth step in degrees"),
    Key("sensor.vertical_resolution", 0.4, "float", "elevation step in degrees"),
    Key("sensor.vertical_fov", (-23.2, 2.0), "pair", "elevation span in degrees"),
    Key("sensor.horizontal_fov", (-45.0, 45.0), "pair", "azimuth span in degrees"),
    Key("sensor.mount_height", 1.73, "float", "sensor height above the road in m"),
    Key("sensor.max_range", 120.0, "float", "maximum return distance in m"),
    Key("sensor.range_noise", 0.0, "float", "std. dev. of range noise in m"),
    Key("seed", 0, "int", "random seed"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def _number(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    return float(v)


def _coerce(key: Key, v):
    if key.kind == "float":
        return _number(key.name, v)
    if key.kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{key.name}: expected an integer, got {v!r}")
        return v
    if key.kind == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{key.name}: expected a string, got {v!r}")
        return v
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{key.name}: expected a list, got {v!r}")
    if key.kind == "pair":
        if len(v) != 2:
            raise ConfigError(f"{key.name}: expected [min, max], got {v!r}")
        return tuple(_number(key.name, x) for x in v)
    if key.kind == "floats":
        if not v:
            raise ConfigError(f"{key.name}: expected a non-empty list")
        return tuple(_number(key.name, x) for x in v)
    return tuple(_coerce(Key(key.name, None, "pair", ""), x) for x in v)


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


@dataclass(frozen=True)
class ToolConfig:
    values: dict = field(default_factory=lambda: {k.name: k.default for k in KEYS})

    def __post_init__(self):
        # build every component once so invalid combinations fail early
        self.crop, self.grid, self.raster, self.encoding, self.split, self.eval, self.sensor
        if self.fov_source not in ("calibration", "wedge", "none"):
            raise ConfigError(f"fov.source must be calibration, wedge or none, got {self.fov_source!r}")
        if not 0.0 <= self["fov.min_fraction"] <= 1.0:
            raise ConfigError("fov.min_fraction must lie in [0, 1]")
        if len(self["eval.buckets"]) < 1:
            raise ConfigError("eval.buckets needs at least one bucket")
        if any(not 0.0 < t <= 1.0 for t in self["eval.iou_thresholds"]):
            raise ConfigError("eval.iou_thresholds must lie in (0, 1]")

    def __getitem__(self, name):
        return self.values[name]

    @classmethod
    def from_dict(cls, data: dict, base: Optional["ToolConfig"] = None) -> "ToolConfig":
        values = dict((base or cls()).values)
        for name, v in _flatten(data).items():
            if name not in KEY_INDEX:
                raise ConfigError(f"unknown config key {name!r}")
            values[name] = _coerce(KEY_INDEX[name], v)
        return cls(values)

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if KEY_INDEX[k].kind == "pairs" else list(v) if isinstance(v, tuple) else v)
                for k, v in self.values.items()}

    @property
    def crop(self) -> CropBounds:
        return CropBounds(self["crop.x_range"], self["crop.y_range"], self["crop.z_range"])

    @property
    def grid(self) -> BevGrid:
        return BevGrid(self["crop.x_range"], self["crop.y_range"], self["grid.resolution"])

    @property
    def raster(self) -> RasterParams:
        if self["raster.multi_slices"] < 1:
            raise ConfigError("raster.multi_slices must be positive")
        edges = self["raster.height_slices"]
        if len(edges) != 4 or list(edges) != sorted(edges):
            raise ConfigError("raster.height_slices needs four increasing edges")
        if self["raster.density_norm"] <= 1:
            raise ConfigError("raster.density_norm must exceed 1")
        return RasterParams(self["crop.z_range"], edges, self["raster.multi_slices"], self["raster.density_norm"])

    @property
    def encoding(self) -> Encoding:
        return Encoding.parse(self["raster.encoding"])

    @property
    def fov_source(self) -> str:
        return self["fov.source"]

    @property
    def split(self) -> RangeSplitParams:
        return RangeSplitParams(self["split.label_threshold"], self["split.inside_mask_max"],
                                self["split.outside_mask_min"], self["split.inference_boundary"])

    @property
    def eval(self) -> EvalConfig:
        return EvalConfig(self["eval.iou_thresholds"], self["eval.buckets"], self["eval.lateral_range"])

    @property
    def sensor(self) -> SensorModel:
        return SensorModel(
            self["sensor.horizontal_resolution"], self["sensor.vertical_resolution"], self["sensor.vertical_fov"],
            self["sensor.horizontal_fov"], self["sensor.mount_height"], self["sensor.max_range"],
            self["sensor.range_noise"],
        )

    @property
    def seed(self) -> int:
        return self["seed"]


def load_config(path=None, overrides: Optional[dict] = None) -> ToolConfig:
    cfg = ToolConfig()
    if path is not None:
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {p} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        cfg = ToolConfig.from_dict(data, cfg)
    if overrides:
        cfg = ToolConfig.from_dict(overrides, cfg)
    return cfg


def _show(v) -> str:
    return json.dumps(v if not isinstance(v, tuple) else json.loads(json.dumps(v)))


def describe(prefixes: Optional[tuple] = None) -> str:
    """One line per config key: name, default, meaning."""
    keys = [k for k in KEYS if prefixes is None or k.name.split(".")[0] in prefixes]
    width = max(len(k.name) for k in keys)
    return "\n".join(f"  {k.name:<{width}}  {_show(k.default):<26} {k.doc}" for k in keys)

