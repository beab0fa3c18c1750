"""Command-line entry point.

Every subcommand reads the shared INI config (``--config``), applies its own
flags on top and writes the resolved snapshot next to what it produces.
Failures print a single ``error: <Category>: <message>`` line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import (DETECTORS, MOTION_MODELS, Config, DetectorConfig, LossConfig, SimConfig,
                     TrackerConfig, TrainConfig, load_config, save_config, with_overrides)
from .datamodel import (PointSet, load_points, load_sequence, load_trajectories, save_points,
                        save_sequence, save_trajectories)
from .errors import InvalidArgument, NotFound, PipsusError

log = logging.getLogger("pipsus")

# Layout of a sample directory as written by ``simulate``.
FRAMES_DIR = "frames"
TRAJ_FILE = "trajectories.json"
POINTS_FILE = "points.json"
SIMLOG_FILE = "simlog.json"
TEACHER_FILE = "teacher.json"
SNAPSHOT = "config.ini"


def _d(section, name) -> str:
    return f"(default: {getattr(section, name)})"


_TR, _LO, _SI, _DE, _TN = TrackerConfig(), LossConfig(), SimConfig(), DetectorConfig(), TrainConfig()


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().replace("x", ",").split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return h, w


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from exc
    return lo, hi


# ---------------------------------------------------------------------------
# Config resolution


def _resolve(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    sim = with_overrides(cfg.sim, {
        "seq_len": getattr(args, "seq_len", None),
        "max_translation_per_frame": getattr(args, "max_translation", None),
        "intensity_gain_range": getattr(args, "gain_range", None),
        "intensity_bias_range": getattr(args, "bias_range", None),
        "noise_std": getattr(args, "noise_std", None),
        "motion_model": getattr(args, "motion_model", None),
        "rng_seed": getattr(args, "seed", None),
    })
    det = with_overrides(cfg.detector, {
        "detector": getattr(args, "detector", None),
        "contrast_threshold": getattr(args, "contrast_threshold", None),
        "edge_threshold": getattr(args, "edge_threshold", None),
        "max_points": getattr(args, "max_points", None),
        "grid_stride": getattr(args, "grid_stride", None),
        "margin": getattr(args, "margin", None),
    })
    train = with_overrides(cfg.train, {
        "warmup_epochs": getattr(args, "warmup_epochs", None),
        "main_epochs": getattr(args, "main_epochs", None),
        "lr_warmup": getattr(args, "lr_warmup", None),
        "lr_main": getattr(args, "lr_main", None),
        "seed": getattr(args, "seed", None),
    })
    tracker = with_overrides(cfg.tracker, {"image_size": getattr(args, "size", None)})
    resolved = Config(tracker, cfg.loss, sim, det, train)
    print("config: " + json.dumps(resolved.to_dict(), sort_keys=True), file=sys.stderr)
    return resolved


def _snapshot(cfg: Config, out: Path) -> None:
    """Write the config snapshot inside ``out`` (a directory) or beside it."""
    path = out / SNAPSHOT if out.is_dir() else out.with_name(out.name + "." + SNAPSHOT)
    save_config(cfg, path)


def _points_for(frame: np.ndarray, args, cfg: Config) -> PointSet:
    if getattr(args, "points", None):
        return load_points(args.points)
    from .keypoints import detect

    return detect(frame, cfg.detector)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> int:
    from .simulator import simulate_sequence, speckle_image

    cfg = _resolve(args)
    size = cfg.tracker.image_size
    if args.input:
        base = load_sequence(args.input, size=size).frames[0]
    else:
        base = speckle_image(size, np.random.default_rng(cfg.sim.rng_seed))
    pts = _points_for(base, args, cfg)
    seq, traj, simlog = simulate_sequence(base, pts, cfg.sim, seq_id=args.out.name, return_log=True)
    args.out.mkdir(parents=True, exist_ok=True)
    save_sequence(seq, args.out / FRAMES_DIR)
    save_points(pts, args.out / POINTS_FILE)
    save_trajectories(traj, args.out / TRAJ_FILE)
    simlog.save(args.out / SIMLOG_FILE)
    _snapshot(cfg, args.out)
    print(f"wrote {len(seq)} frames, {len(pts)} points to {args.out}")
    return 0


def cmd_detect(args) -> int:
    from .keypoints import detect

    cfg = _resolve(args)
    frame = load_sequence(args.sequence, size=cfg.tracker.image_size).frames[0]
    pts = detect(frame, cfg.detector)
    save_points(pts, args.out)
    _snapshot(cfg, args.out)
    print(f"wrote {len(pts)} points to {args.out}")
    return 0


def _sample_dir(path: Path, size, kind: str):
    from .teacher import ingest_teacher_labels, oracle_teacher
    from .trainer import Sample

    seq = load_sequence(path / FRAMES_DIR, size=size, seq_id=path.name)
    if kind == "sim":
        return Sample(seq, load_trajectories(path / TRAJ_FILE), "sim")
    if (path / TEACHER_FILE).exists():
        traj = ingest_teacher_labels(seq, path / TEACHER_FILE)
    else:
        traj = oracle_teacher(seq, load_points(path / POINTS_FILE),
                              path / SIMLOG_FILE if (path / SIMLOG_FILE).exists() else None)
    return Sample(seq, traj, "teacher")


def cmd_train(args) -> int:
    import torch

    from .tracker import PIPsUS, save_checkpoint
    from .trainer import load_into, train_main, warmup, write_log, zero_flow_samples

    cfg = _resolve(args)
    size = cfg.tracker.image_size
    sim = [_sample_dir(p, size, "sim") for p in args.sim]
    teacher = [_sample_dir(p, size, "teacher") for p in args.teacher]
    val = [_sample_dir(p, size, "teacher") for p in args.val]
    if not sim and not teacher:
        raise InvalidArgument("nothing to train on: pass --sim and/or --teacher directories")
    torch.manual_seed(cfg.train.seed)
    model = PIPsUS(cfg.tracker)
    rows = []
    if sim and cfg.train.warmup_epochs > 0:
        rows += warmup(model, sim, cfg.train, cfg.loss)["log"]
    meta = {}
    if teacher and cfg.train.main_epochs > 0:
        base = teacher
        zero = zero_flow_samples([s.video.frames[0] for s in base],
                                 [PointSet(s.traj.positions[:, 0]) for s in base], len(base[0].video))
        best = train_main(model, teacher, sim, zero, cfg.train, cfg.loss, val_dataset=val)
        rows += best["log"]
        load_into(model, best)
        meta = {"best_epoch": best["epoch"], "val_loss": best.get("val_loss")}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, args.out, config=cfg.to_dict(), **meta)
    log_path = args.log or args.out.with_suffix(".log.tsv")
    write_log(rows, log_path)
    _snapshot(cfg, args.out)
    print(f"wrote checkpoint {args.out} and log {log_path}")
    return 0


def cmd_track(args) -> int:
    from .baselines import NCCTracker, ZeroMotionTracker

    cfg = _resolve(args)
    if args.method == "pipsus":
        from .tracker import StreamingTracker, load_checkpoint

        if not args.checkpoint:
            raise InvalidArgument("--checkpoint is required for --method pipsus")
        model, _ = load_checkpoint(args.checkpoint)
        tracker = StreamingTracker(model)
        size = model.cfg.image_size
    else:
        tracker = NCCTracker(args.patch_size, args.search_radius) if args.method == "ncc" else ZeroMotionTracker()
        size = cfg.tracker.image_size
    seq = load_sequence(args.sequence, size=size)
    pts = _points_for(seq.frames[0], args, cfg)
    traj = tracker.track(seq, pts)
    save_trajectories(traj, args.out)
    _snapshot(cfg, args.out)
    print(f"wrote {traj.n} trajectories over {traj.T} frames to {args.out}")
    if args.fps_report:
        from .metrics import measure_fps

        rep = measure_fps(tracker, seq, pts)
        print(json.dumps({"fps": rep.fps, "runs": rep.runs, "machine": rep.machine}))
    return 0


def cmd_eval(args) -> int:
    from .metrics import drift_curve, evaluate, format_table, write_report

    pred = load_trajectories(args.pred)
    gt = load_trajectories(args.gt)
    if pred.positions.shape != gt.positions.shape:
        from .errors import FormatError

        raise FormatError(f"prediction {pred.positions.shape} and ground truth {gt.positions.shape} differ in shape")
    frames = load_sequence(args.sequence, size=args.size).frames if args.sequence else None
    row = evaluate(pred, gt, frames, args.patch_size)
    results = {(args.dataset, args.method): row}
    print(format_table(results))
    if args.out:
        write_report(results, args.out)
    if args.drift:
        drift_curve(pred, gt).save_csv(args.drift)
    return 0


def cmd_plot(args) -> int:
    from .metrics import DriftCurve, plot_drift

    curves = {}
    for item in args.curves:
        name, _, path = item.rpartition("=")
        path = Path(path)
        if not path.exists():
            raise NotFound(f"curve file not found: {path}")
        curves[name or path.stem] = DriftCurve.load_csv(path)
    plot_drift(curves, args.out, args.title)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _sim_flags(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--seq-len", type=int, help=f"frames per sequence {_d(_SI, 'seq_len')}")
    g.add_argument("--max-translation", type=float,
                   help=f"max displacement per frame in px {_d(_SI, 'max_translation_per_frame')}")
    g.add_argument("--gain-range", type=_pair, help=f"intensity gain lo,hi {_d(_SI, 'intensity_gain_range')}")
    g.add_argument("--bias-range", type=_pair, help=f"intensity bias lo,hi {_d(_SI, 'intensity_bias_range')}")
    g.add_argument("--noise-std", type=float, help=f"additive noise std {_d(_SI, 'noise_std')}")
    g.add_argument("--motion-model", choices=MOTION_MODELS, help=f"{_d(_SI, 'motion_model')}")


def _det_flags(p):
    g = p.add_argument_group("keypoints")
    g.add_argument("--detector", choices=DETECTORS, help=_d(_DE, "detector"))
    g.add_argument("--contrast-threshold", type=float, help=f"SIFT contrast threshold {_d(_DE, 'contrast_threshold')}")
    g.add_argument("--edge-threshold", type=float, help=f"SIFT edge threshold {_d(_DE, 'edge_threshold')}")
    g.add_argument("--max-points", type=int, help=_d(_DE, "max_points"))
    g.add_argument("--grid-stride", type=int, help=f"grid detector spacing {_d(_DE, 'grid_stride')}")
    g.add_argument("--margin", type=float, help=f"border exclusion in px {_d(_DE, 'margin')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipsus", description="Streaming point tracking for ultrasound video.")
    parser.add_argument("--config", type=Path, help="INI config file; flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and the resolved config")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="make a synthetic sequence with exact trajectories")
    p.add_argument("--input", type=Path, help="base image or sequence (first frame used); speckle if omitted")
    p.add_argument("--points", type=Path, help="points file; detected on the base frame if omitted")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help=f"random seed {_d(_SI, 'rng_seed')}")
    p.add_argument("--size", type=_size, help=f"frame size HxW {_d(_TR, 'image_size')}")
    _sim_flags(p)
    _det_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="detect keypoints on the first frame of a sequence")
    p.add_argument("--sequence", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="points file to write")
    p.add_argument("--size", type=_size, help=f"frame size HxW {_d(_TR, 'image_size')}")
    _det_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train", help="warm up on simulated data, then train on teacher labels")
    p.add_argument("--sim", type=Path, nargs="*", default=[], help="simulated sample directories")
    p.add_argument("--teacher", type=Path, nargs="*", default=[],
                   help=f"teacher sample directories ({TEACHER_FILE} labels, else the simulation log)")
    p.add_argument("--val", type=Path, nargs="*", default=[], help="validation sample directories")
    p.add_argument("--out", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--log", type=Path, help="training log (TSV); defaults beside the checkpoint")
    p.add_argument("--warmup-epochs", type=int, help=_d(_TN, "warmup_epochs"))
    p.add_argument("--main-epochs", type=int, help=_d(_TN, "main_epochs"))
    p.add_argument("--lr-warmup", type=float, help=_d(_TN, "lr_warmup"))
    p.add_argument("--lr-main", type=float, help=_d(_TN, "lr_main"))
    p.add_argument("--seed", type=int, help=_d(_TN, "seed"))
    p.add_argument("--size", type=_size, help=f"frame size HxW {_d(_TR, 'image_size')}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track points through a sequence")
    p.add_argument("--sequence", type=Path, required=True)
    p.add_argument("--points", type=Path, help="points file; detected on frame 0 if omitted")
    p.add_argument("--checkpoint", type=Path, help="model checkpoint (pipsus method)")
    p.add_argument("--method", choices=("pipsus", "ncc", "zero"), default="pipsus", help="(default: pipsus)")
    p.add_argument("--patch-size", type=int, default=17, help="NCC template size (default: 17)")
    p.add_argument("--search-radius", type=int, default=32, help="NCC search radius (default: 32)")
    p.add_argument("--out", type=Path, required=True, help="trajectory file to write")
    p.add_argument("--fps-report", action="store_true", help="print frames/second over the run")
    p.add_argument("--size", type=_size, help=f"frame size HxW for baselines {_d(_TR, 'image_size')}")
    _det_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predicted trajectories against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--sequence", type=Path, help="frames for the patch-similarity metric")
    p.add_argument("--size", type=_size, default=(256, 256), help="frame size HxW (default: 256x256)")
    p.add_argument("--patch-size", type=int, default=16, help="similarity patch size (default: 16)")
    p.add_argument("--dataset", default="data", help="dataset label in the report")
    p.add_argument("--method", default="pipsus", help="method label in the report")
    p.add_argument("--out", type=Path, help="report file (.csv or .json)")
    p.add_argument("--drift", type=Path, help="per-frame error curve CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="plot drift curves")
    p.add_argument("curves", nargs="+", help="NAME=curve.csv entries")
    p.add_argument("--out", type=Path, required=True, help="image file")
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipsusError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: NotFound: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
