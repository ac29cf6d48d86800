"""Range-aware BEV object detection tooling: geometry, LiDAR I/O and
rasterization, range-split training data, LiDAR simulation and
KITTI-style BEV evaluation."""

from rangebev.bev import BevGrid, BevImage, Encoding, rasterize
from rangebev.geometry import RotatedBox, canonicalize, nms_rotated, rotated_iou
from rangebev.kitti_eval import EvalConfig, evaluate
from rangebev.pointcloud_io import Calibration, GroundTruthObject, PointCloud
from rangebev.range_split import RangeSplitParams, merge_detections, split_frame, weighted_map

__version__ = "0.1.0"

__all__ = [
    "BevGrid", "BevImage", "Calibration", "Encoding", "EvalConfig", "GroundTruthObject", "PointCloud",
    "RangeSplitParams", "RotatedBox", "canonicalize", "evaluate", "merge_detections", "nms_rotated",
    "rasterize", "rotated_iou", "split_frame", "weighted_map",
]
