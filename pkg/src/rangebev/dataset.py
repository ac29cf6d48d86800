"""KITTI-style frame directories: velodyne/ID.bin, label_2/ID.txt, calib/ID.txt."""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from rangebev.errors import ParseError
from rangebev.pointcloud_io import (
    Calibration,
    PointCloud,
    default_calibration,
    read_calibration,
    read_labels,
    read_point_cloud,
    write_calibration,
    write_labels,
    write_point_cloud,
)

VELODYNE, LABELS, CALIB = "velodyne", "label_2", "calib"


class FrameData(NamedTuple):
    frame_id: str
    cloud: PointCloud
    objects: list  # ground truth, empty when the frame has no label file
    calibration: Calibration
    has_labels: bool


def list_frames(root) -> list:
    """Sorted frame ids of a dataset directory."""
    root = Path(root)
    if not (root / VELODYNE).is_dir():
        raise FileNotFoundError(f"{root} has no {VELODYNE}/ directory")
    return sorted(p.stem for p in (root / VELODYNE).glob("*.bin"))


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not a text file") from exc


def load_calibration(root, frame_id: str) -> Calibration:
    path = Path(root) / CALIB / f"{frame_id}.txt"
    if not path.exists():
        return default_calibration()
    try:
        return read_calibration(_read_text(path))
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", offset=exc.offset, line=exc.line) from exc


def load_ground_truth(root, frame_id: str, calibration: Optional[Calibration] = None):
    """(objects, present) for one frame's label file."""
    path = Path(root) / LABELS / f"{frame_id}.txt"
    if not path.exists():
        return [], False
    calibration = load_calibration(root, frame_id) if calibration is None else calibration
    try:
        return read_labels(_read_text(path), calibration), True
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", offset=exc.offset, line=exc.line) from exc


def load_frame(root, frame_id: str) -> FrameData:
    root = Path(root)
    path = root / VELODYNE / f"{frame_id}.bin"
    try:
        cloud = read_point_cloud(path.read_bytes(), frame_id)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", offset=exc.offset) from exc
    calib = load_calibration(root, frame_id)
    objects, present = load_ground_truth(root, frame_id, calib)
    return FrameData(frame_id, cloud, objects, calib, present)


def frame_files(root, frame_id: str) -> list:
    root = Path(root)
    return [root / VELODYNE / f"{frame_id}.bin", root / LABELS / f"{frame_id}.txt", root / CALIB / f"{frame_id}.txt"]


def write_frame(root, frame_id: str, cloud: PointCloud, objects: Sequence, calibration: Calibration) -> list:
    """Write one frame in the dataset layout; returns the written paths."""
    paths = frame_files(root, frame_id)
    for p in paths:
        p.parent.mkdir(parents=True, exist_ok=True)
    paths[0].write_bytes(write_point_cloud(cloud))
    paths[1].write_text(write_labels(objects, calibration))
    paths[2].write_text(write_calibration(calibration))
    return paths
