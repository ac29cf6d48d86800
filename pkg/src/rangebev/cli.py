"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 selfcheck failure.
Outputs of a failed command are removed again.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from rangebev import dataset
from rangebev.bev import Encoding, dump_raster, encode_png, fov_mask, rasterize, to_rgb
from rangebev.config import ToolConfig, describe, load_config
from rangebev.errors import RangeBevError
from rangebev.kitti_eval import evaluate
from rangebev.lidar_sim import Scene, car_cuboid, distance_sweep, load_scenes, random_scene, simulate_scan
from rangebev.pointcloud_io import (
    crop_filter,
    default_calibration,
    fov_filter,
    format_labels,
    label_to_object,
    parse_labels,
    write_calibration,
    write_labels,
    write_point_cloud,
)
from rangebev.range_split import (
    assign_objects,
    mask_bev,
    merge_detection_sets,
    read_detections,
    write_detections,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Outputs:
    """Records files and directories a command creates so a failure can undo them."""

    def __init__(self):
        self.files: list = []
        self.dirs: list = []

    def mkdir(self, path) -> Path:
        path = Path(path)
        missing = []
        p = path
        while not p.exists():
            missing.append(p)
            p = p.parent
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(reversed(missing))
        return path

    def write(self, path, data) -> Path:
        path = Path(path)
        self.mkdir(path.parent)
        existed = path.exists()
        if isinstance(data, str):
            data = data.encode()
        path.write_bytes(data)
        if not existed:
            self.files.append(path)
        return path

    def rollback(self):
        for f in reversed(self.files):
            f.unlink(missing_ok=True)
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# per-frame work, top level so worker processes can run it


def _frame_fov(cfg: ToolConfig, calibration):
    if cfg.fov_source == "none":
        return None
    calib = calibration if cfg.fov_source == "calibration" else None
    return fov_mask(cfg.grid, calib, wedge_deg=cfg["fov.wedge_deg"])


def _raster_task(args):
    root, fid, values, encoding, png = args
    cfg = ToolConfig(values)
    frame = dataset.load_frame(root, fid)
    image = rasterize(crop_filter(frame.cloud, cfg.crop), encoding, cfg.grid,
                      _frame_fov(cfg, frame.calibration), cfg.raster)
    return dump_raster(image), (to_rgb(image) if png else None)


def _split_task(args):
    root, fid, values = args
    cfg = ToolConfig(values)
    frame = dataset.load_frame(root, fid)
    image = rasterize(crop_filter(frame.cloud, cfg.crop), cfg.encoding, cfg.grid,
                      _frame_fov(cfg, frame.calibration), cfg.raster)
    p = cfg.split
    # labels keep their original text; only cars visible to the camera are split
    label_path = Path(root) / dataset.LABELS / f"{fid}.txt"
    labels = parse_labels(label_path.read_text()) if label_path.exists() else []
    cars = [lab for lab in labels if lab.type == "Car"]
    objects = [label_to_object(lab, frame.calibration) for lab in cars]
    if cfg.fov_source != "none":
        calib = frame.calibration if cfg.fov_source == "calibration" else None
        kept = {id(o) for o in fov_filter(objects, calib, cfg["grid.resolution"], cfg["fov.min_fraction"],
                                          wedge_deg=cfg["fov.wedge_deg"])}
        pairs = [(lab, o) for lab, o in zip(cars, objects) if id(o) in kept]
    else:
        pairs = list(zip(cars, objects))
    inside, outside = assign_objects([o for _, o in pairs], p)
    inside_ids = {id(o) for o in inside}
    near = [lab for lab, o in pairs if id(o) in inside_ids]
    far = [lab for lab, o in pairs if id(o) not in inside_ids]
    return (dump_raster(mask_bev(image, None, p.inside_mask_max)), format_labels(near),
            dump_raster(mask_bev(image, p.outside_mask_min, None)), format_labels(far))


def _simulate_task(args):
    scene_dict, values, seed = args
    cfg = ToolConfig(values)
    result = simulate_scan(Scene.from_dict(scene_dict), cfg.sensor, seed, default_calibration())
    objects = result.objects
    if cfg.fov_source != "none":
        calib = default_calibration() if cfg.fov_source == "calibration" else None
        objects = fov_filter(objects, calib, cfg["grid.resolution"], cfg["fov.min_fraction"],
                             wedge_deg=cfg["fov.wedge_deg"])
    return result.cloud, objects


def _run(func: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))  # map keeps input order


# ---------------------------------------------------------------------------
# commands


def _frame_ids(root, wanted: Optional[Sequence[str]]) -> list:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    ids = dataset.list_frames(root)
    if wanted:
        missing = sorted(set(wanted) - set(ids))
        if missing:
            raise FileNotFoundError(f"frames not found in {root}: {', '.join(missing)}")
        ids = [i for i in ids if i in set(wanted)]
    return ids


def cmd_rasterize(args, cfg: ToolConfig, out: Outputs) -> int:
    encoding = Encoding.parse(args.encoding) if args.encoding else cfg.encoding
    ids = _frame_ids(args.frames, args.frame)
    results = _run(_raster_task, [(str(args.frames), fid, cfg.values, encoding, args.png) for fid in ids],
                   args.workers)
    target = out.mkdir(args.out)
    for fid, (raw, rgb) in zip(ids, results):
        out.write(target / f"{fid}.raster", raw)
        if rgb is not None:
            out.write(target / f"{fid}.png", encode_png(rgb))
    print(f"rasterized {len(ids)} frames ({encoding.value}) into {target}")
    return EXIT_OK


def cmd_simulate(args, cfg: ToolConfig, out: Outputs) -> int:
    if (args.scene is None) == (args.random is None):
        raise UsageError("simulate needs exactly one of --scene FILE or --random N")
    if args.scene is not None:
        scenes = load_scenes(Path(args.scene).read_text())
    else:
        if args.random < 1:
            raise UsageError("--random needs a positive frame count")
        rng = np.random.default_rng(cfg.seed)
        scenes = [random_scene(rng, int(rng.integers(1, args.cars + 1))) for _ in range(args.random)]
    tasks = [(s.to_dict(), cfg.values, cfg.seed + i) for i, s in enumerate(scenes)]
    results = _run(_simulate_task, tasks, args.workers)
    root = out.mkdir(args.out)
    calib = default_calibration()
    for i, (cloud, objects) in enumerate(results):
        fid = f"{i:06d}"
        velo, label, cal = dataset.frame_files(root, fid)
        out.write(velo, write_point_cloud(cloud))
        out.write(label, write_labels(objects, calib))
        out.write(cal, write_calibration(calib))
    print(f"simulated {len(results)} frames into {root}")
    return EXIT_OK


def _parse_distances(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--distances expects comma-separated numbers, got {text!r}") from exc
    if not values or any(v <= 0 for v in values):
        raise UsageError("--distances needs positive distances")
    return values


def cmd_stats(args, cfg: ToolConfig, out: Outputs) -> int:
    distances = _parse_distances(args.distances)
    if args.scene is not None:
        scene = load_scenes(Path(args.scene).read_text())[0]
        if not scene.cuboids:
            raise RangeBevError(f"{args.scene}: the scene holds no cuboid to measure")
        target, ground = scene.cuboids[0], scene.ground
    else:
        target, ground = car_cuboid(0.0), Scene.from_dict({"ground": {}}).ground
    rows = distance_sweep(target, distances, cfg.sensor, ground, cfg.seed)

    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    lines = ["distance_m,points,median_horizontal_gap_m,median_vertical_gap_m"]
    lines += [f"{d:g},{st.point_count},{fmt(st.median_horizontal_gap)},{fmt(st.median_vertical_gap)}" for d, st in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        out.write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_split(args, cfg: ToolConfig, out: Outputs) -> int:
    ids = _frame_ids(args.frames, args.frame)
    results = _run(_split_task, [(str(args.frames), fid, cfg.values) for fid in ids], args.workers)
    root = out.mkdir(args.out)
    counts = [0, 0]
    for fid, (near_img, near_lab, far_img, far_lab) in zip(ids, results):
        out.write(root / "inside" / "bev" / f"{fid}.raster", near_img)
        out.write(root / "inside" / dataset.LABELS / f"{fid}.txt", near_lab)
        out.write(root / "outside" / "bev" / f"{fid}.raster", far_img)
        out.write(root / "outside" / dataset.LABELS / f"{fid}.txt", far_lab)
        counts[0] += len(near_lab.splitlines())
        counts[1] += len(far_lab.splitlines())
    print(f"split {len(ids)} frames: {counts[0]} inside labels, {counts[1]} outside labels")
    return EXIT_OK


def cmd_merge(args, cfg: ToolConfig, out: Outputs) -> int:
    inside = read_detections(Path(args.inside).read_text())
    outside = read_detections(Path(args.outside).read_text())
    merged = merge_detection_sets(inside, outside, cfg.split)
    out.write(args.out, write_detections(merged))
    print(f"merged {sum(map(len, merged.values()))} detections over {len(merged)} frames into {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: ToolConfig, out: Outputs) -> int:
    root = Path(args.gt)
    label_dir = root / dataset.LABELS
    if not label_dir.is_dir():
        raise FileNotFoundError(f"{root} has no {dataset.LABELS}/ directory")
    gts = {}
    for path in sorted(label_dir.glob("*.txt")):
        gts[path.stem], _ = dataset.load_ground_truth(root, path.stem)
    dets = read_detections(Path(args.det).read_text())
    report = evaluate(gts, dets, cfg.eval, keep_curves=args.pr_csv is not None)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(report.table())
    if args.json:
        out.write(args.json, report.to_json())
    if args.pr_csv:
        target = out.mkdir(args.pr_csv)
        for (diff, bucket, thr), cell in report.cells.items():
            if cell.curve is not None:
                out.write(target / f"{diff.lower()}_{bucket}m_iou{thr:g}.csv", cell.curve.to_csv())
    return EXIT_OK


def cmd_selfcheck(args, cfg: ToolConfig, out: Outputs) -> int:
    from rangebev.selfcheck import run_all

    ok = True
    for r in run_all(args.pairs, args.datasets, cfg.seed):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} [{r.seconds:.1f}s]")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_SELFCHECK


# ---------------------------------------------------------------------------
# argument parsing


def _config_epilog() -> str:
    return ("configuration keys and defaults (set with --config FILE.json or --set KEY=VALUE):\n" + describe())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file overriding the defaults below")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; VALUE is parsed as JSON when possible")
    common.add_argument("--workers", type=int, default=1, help="frame-level worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="rangebev", description="BEV rasterization, range-split training data, LiDAR "
                     "simulation and KITTI-style BEV evaluation.", epilog=_config_epilog(),
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text, func):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("rasterize", "encode every frame of a dataset as a BEV raster", cmd_rasterize)
    p.add_argument("frames", help="dataset directory with velodyne/ (and optionally calib/)")
    p.add_argument("--out", required=True, help="output directory for ID.raster files")
    p.add_argument("--encoding", help="override raster.encoding")
    p.add_argument("--png", action="store_true", help="also write ID.png previews")
    p.add_argument("--frame", action="append", help="restrict to these frame ids")

    p = add("simulate", "ray-cast synthetic frames into the dataset layout", cmd_simulate)
    p.add_argument("--scene", help="JSON scene file (one scene or {\"frames\": [...]})")
    p.add_argument("--random", type=int, help="generate N random car scenes instead")
    p.add_argument("--cars", type=int, default=8, help="maximum cars per random scene (default 8)")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("stats", "point count and spacing of a target over distances (CSV)", cmd_stats)
    p.add_argument("--scene", help="JSON scene; its first cuboid is the target (default: a 4.5x2.0x1.6 m car)")
    p.add_argument("--distances", default="7.6,16,24.4,43", help="comma-separated distances in m")
    p.add_argument("--out", help="CSV path (default stdout)")

    p = add("split", "build inside/outside training samples", cmd_split)
    p.add_argument("frames", help="dataset directory")
    p.add_argument("--out", required=True, help="output directory (inside/ and outside/)")
    p.add_argument("--frame", action="append", help="restrict to these frame ids")

    p = add("merge", "merge near-model and far-model detections at the inference boundary", cmd_merge)
    p.add_argument("--inside", required=True, help="detections of the near model")
    p.add_argument("--outside", required=True, help="detections of the far model")
    p.add_argument("--out", required=True, help="merged detection file")

    p = add("eval", "BEV average precision by difficulty, range and IoU threshold", cmd_eval)
    p.add_argument("--gt", required=True, help="dataset directory with label_2/ (and calib/)")
    p.add_argument("--det", required=True, help="detection file")
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--pr-csv", help="directory for per-cell precision-recall CSVs")

    p = add("selfcheck", "verify IoU and AP against independent oracles", cmd_selfcheck)
    p.add_argument("--pairs", type=int, default=1000, help="random IoU pairs (default 1000)")
    p.add_argument("--datasets", type=int, default=200, help="random AP micro-datasets (default 200)")
    return parser


def _overrides(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    out = Outputs()
    try:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg = load_config(args.config, _overrides(args.set))
        return args.func(args, cfg, out)
    except UsageError as exc:
        out.rollback()
        print(f"rangebev {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RangeBevError, ValueError, OSError) as exc:
        out.rollback()
        print(f"rangebev {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BaseException:
        out.rollback()
        raise


if __name__ == "__main__":
    sys.exit(main())
