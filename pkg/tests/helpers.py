"""Shared generators and CLI helpers for the tests."""

import json
from pathlib import Path

from rangebev import dataset
from rangebev.range_split import write_detections
from rangebev.selfcheck import brute_force_cell, brute_force_report, random_gt, random_micro_dataset  # noqa: F401


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def perfect_detections(root: Path) -> str:
    """Detection file holding every labeled car of a dataset at confidence 1."""
    ids = sorted(p.stem for p in (root / dataset.LABELS).glob("*.txt"))
    return write_detections({i: [o.box.with_confidence(1.0) for o in dataset.load_ground_truth(root, i)[0]]
                             for i in ids})


def all_commands(src: Path, out: Path) -> list:
    """One invocation of every subcommand, writing under ``out``."""
    det = src.parent / "det.txt"
    if not det.exists():
        det.write_text(perfect_detections(src))
    scene = src.parent / "scene.json"
    scene.write_text(json.dumps({"ground": {"z": -1.73}, "cuboids": [
        {"center": [15, 2, -0.93], "dims": [4.5, 2.0, 1.6], "yaw": 20, "reflectance": 0.7}]}))
    cmds = [
        ["rasterize", src, "--out", out / "r", "--png", "--encoding", "multi_height"],
        ["simulate", "--random", "2", "--out", out / "sim", "--set", "sensor.range_noise=0.02"],
        ["simulate", "--scene", scene, "--out", out / "sim2"],
        ["stats", "--scene", scene, "--distances", "5,10,20", "--out", out / "stats.csv"],
        ["split", src, "--out", out / "split"],
        ["merge", "--inside", det, "--outside", det, "--out", out / "merged.txt"],
        ["eval", "--gt", src, "--det", det, "--json", out / "eval.json", "--pr-csv", out / "pr"],
    ]
    return [[str(a) for a in c] for c in cmds]
