"""
Command Line Interface for the VFS laboratory.

    vfs gen-data  --out <dir> [--spec <file>] [--seed N] [--split eval|train] [--count N]
    vfs train     --config <file> --out <run-dir>
    vfs propagate --ckpt <file> --clip <dir> [--config <file>] --out <dir>
    vfs track     --ckpt <file> --clip <dir> [--init-box x,y,w,h] --out <dir>
    vfs ablate    --axis <axis> --config <file> --out <dir> [--workers N|auto]
    vfs report    --run-dir <dir>

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 otherwise.
"""

import argparse
import csv
import json
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import find_dotenv, load_dotenv

from . import __version__
from .ablation import AXES, run_ablation
from .callbacks import ConsoleCallback
from .checkpoint import load_checkpoint
from .clip_io import load_clip, save_clip, write_png
from .config import ConfigManager, RunConfig
from .corpus import HELD_OUT_OFFSET, gen_spec_from_config
from .errors import ConfigError, NumericError, SpecError, VFSError
from .experiment import METRIC_COLUMNS, load_reports, propagation_config, run_experiment
from .log import get_logger, setup_logging
from .metrics import center_error, precision_at, segmentation_scores, success_auc
from .model import extract_block_maps
from .propagation import propagate_masks
from .synthetic import GenSpec, gen_synthetic_clip
from .tracker import TrackerConfig, encoder_features, track

logger = get_logger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vfs", description="Desk-scale video frame-level similarity lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.json", help="Configuration file (default: config.json)")
    common.add_argument("--local-config", default="config.local.json", help="Local overrides file")
    common.add_argument("--seed", type=int, default=None, help="Run a single seed instead of run.seeds")
    common.add_argument("--out", default=None, help="Output directory")
    common.add_argument("--quiet", action="store_true", help="Only print warnings and errors")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="Write synthetic clips to disk")
    gen.add_argument("--spec", default=None, help="Generator settings JSON (default: built from the data section)")
    gen.add_argument("--split", choices=["eval", "train"], default="eval")
    gen.add_argument("--count", type=int, default=None, help="Number of clips (default from config)")

    sub.add_parser("train", parents=[common], help="Train, evaluate and write a run directory")

    prop = sub.add_parser("propagate", parents=[common], help="Propagate frame-0 labels through a clip")
    prop.add_argument("--ckpt", required=True)
    prop.add_argument("--clip", required=True)

    trk = sub.add_parser("track", parents=[common], help="Track an object through a clip")
    trk.add_argument("--ckpt", required=True)
    trk.add_argument("--clip", required=True)
    trk.add_argument("--init-box", default=None, help="x,y,w,h in frame 0 (default: ground-truth box)")
    trk.add_argument("--object", type=int, default=0, help="Ground-truth object index for scoring")

    abl = sub.add_parser("ablate", parents=[common], help="Run one ablation axis")
    abl.add_argument("--axis", required=True, choices=sorted(AXES))
    abl.add_argument("--workers", default="1", help="Parallel cell processes, or 'auto'")

    rep = sub.add_parser("report", parents=[common], help="Summarise a run directory")
    rep.add_argument("--run-dir", required=True)
    return parser


def _load_config(args) -> RunConfig:
    overrides: Dict[str, Any] = {}
    if args.seed is not None and args.command == "gen-data":
        overrides["data"] = {"seed": args.seed}
    elif args.seed is not None:
        overrides["run"] = {"seeds": [args.seed]}
    if args.quiet:
        overrides.setdefault("run", {})["verbose"] = False
    return ConfigManager(args.config, args.local_config, overrides).run_config


def _require_out(args) -> str:
    if not args.out:
        raise ConfigError(f"'{args.command}' needs --out")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_json(path: str, values: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(values, f, indent=2)


def _read_gen_spec(path: str) -> GenSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            values = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"{path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error parsing {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must hold a JSON object of generator settings")
    try:
        return GenSpec.from_dict(values)
    except (SpecError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def cmd_gen_data(args, config: RunConfig) -> int:
    out = _require_out(args)
    spec = _read_gen_spec(args.spec) if args.spec else gen_spec_from_config(config.data)
    count = args.count if args.count is not None else (
        config.data.eval_clips if args.split == "eval" else config.data.train_clips)
    offset = HELD_OUT_OFFSET if args.split == "eval" else 0
    for i in range(count):
        clip = gen_synthetic_clip(spec, config.data.seed, offset + i)
        save_clip(clip, os.path.join(out, f"clip_{i:04d}"))
    print(f"[done] Wrote {count} {args.split} clips to {out}")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    out = _require_out(args)
    report = run_experiment(config, out, ConsoleCallback(config.run.verbose, config.run.log_every))
    _print_summary(report.rows, report.summary)
    return 0


def cmd_propagate(args, config: RunConfig) -> int:
    out = _require_out(args)
    state = load_checkpoint(args.ckpt)
    clip = load_clip(args.clip)
    settings = config.eval.propagation
    block = settings.readout_block or state.arch.intermediate_block
    maps = extract_block_maps(clip.frames, state.params, state.arch, block, stride_one_from=block)
    result = propagate_masks(maps, clip.gt_masks[0], clip.num_objects + 1, propagation_config(config),
                             settings.reference_extent if settings.scale_radius else None)
    for t, mask in enumerate(result.masks):
        write_png(os.path.join(out, f"mask_{t:04d}.png"), mask.astype(np.uint8))
    scores = segmentation_scores(result.masks, clip.gt_masks, clip.num_objects)
    _write_json(os.path.join(out, "metrics.json"), dict(scores, radius=result.radius, frames=len(result.masks)))
    print(f"[done] J {scores['J']:.4f}  F {scores['F']:.4f}  J&F {scores['J&F']:.4f}")
    return 0


def _parse_box(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--init-box must be x,y,w,h, got '{text}'") from exc
    if len(values) != 4:
        raise ConfigError(f"--init-box must be x,y,w,h, got '{text}'")
    return values


def cmd_track(args, config: RunConfig) -> int:
    out = _require_out(args)
    state = load_checkpoint(args.ckpt)
    clip = load_clip(args.clip)
    settings = config.eval.tracker
    block = settings.readout_block or state.arch.final_block
    features = encoder_features(state.params, state.arch, block,
                                stride_one_from=min(state.arch.intermediate_block, block))
    gt: Optional[np.ndarray] = None
    if 0 <= args.object < clip.num_objects:
        gt = clip.gt_boxes[:, args.object]
    init_box = _parse_box(args.init_box) if args.init_box else (gt[0] if gt is not None else None)
    if init_box is None:
        raise ConfigError("no --init-box given and the clip has no ground-truth box for that object")
    boxes = track(clip.frames, init_box, features, TrackerConfig.from_settings(settings))

    with open(os.path.join(out, "boxes.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "x", "y", "w", "h"])
        for t, box in enumerate(boxes):
            writer.writerow([t] + [f"{v:.3f}" for v in box])
    metrics: Dict[str, Any] = {"frames": len(boxes)}
    if gt is not None:
        metrics.update({
            "precision": precision_at(boxes[1:], gt[1:], settings.precision_threshold),
            "success_auc": success_auc(boxes[1:], gt[1:]),
            "mean_center_error": float(np.mean(center_error(boxes[1:], gt[1:]))) if len(boxes) > 1 else 0.0,
        })
        print(f"[done] precision@{settings.precision_threshold:g}px {metrics['precision']:.4f}  "
              f"success {metrics['success_auc']:.4f}")
    _write_json(os.path.join(out, "metrics.json"), metrics)
    return 0


def cmd_ablate(args, config: RunConfig) -> int:
    out = _require_out(args)
    workers = args.workers if args.workers == "auto" else int(args.workers)
    table = run_ablation(args.axis, config, out, workers,
                         ConsoleCallback(config.run.verbose, config.run.log_every))
    print(table.to_text())
    return 0


def _print_summary(rows: List[Dict[str, Any]], summary: Dict[str, Dict[str, float]]) -> None:
    print("seed\tsteps\t" + "\t".join(METRIC_COLUMNS))
    for row in rows:
        print(f"{row['seed']}\t{row['steps']}\t" + "\t".join(f"{row[c]:.4f}" for c in METRIC_COLUMNS))
    print("mean\t\t" + "\t".join(f"{summary[c]['mean']:.4f}" for c in METRIC_COLUMNS if c in summary))
    print("std\t\t" + "\t".join(f"{summary[c]['std']:.4f}" for c in METRIC_COLUMNS if c in summary))


def cmd_report(args, config: RunConfig) -> int:
    reports = load_reports(os.path.join(args.run_dir, "report.json"))
    if not reports:
        raise ConfigError(f"{args.run_dir} has no report.json")
    latest = reports[-1]
    print(f"[i] {len(reports)} report(s); latest config hash {latest['config_hash'][:12]}")
    _print_summary(latest["rows"], latest["summary"])
    with open(os.path.join(args.run_dir, "summary.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "mean", "std"])
        for column in METRIC_COLUMNS:
            if column in latest["summary"]:
                writer.writerow([column, repr(latest["summary"][column]["mean"]),
                                 repr(latest["summary"][column]["std"])])
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "propagate": cmd_propagate,
    "track": cmd_track,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point for the VFS laboratory."""
    args = build_parser().parse_args(argv)
    load_dotenv(find_dotenv(usecwd=True))
    setup_logging(verbose=not args.quiet)
    try:
        config = _load_config(args)
        return COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        print("\n[!] Interrupted by user")
        return 1
    except ConfigError as e:
        print(f"[!] Configuration error: {e}")
        return 2
    except NumericError as e:
        print(f"[!] Numeric failure: {e}")
        return 3
    except VFSError as e:
        print(f"[!] {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
