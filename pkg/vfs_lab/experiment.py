"""
Experiment runs: train per seed, evaluate both readouts, write the run directory.

    <out>/config.snapshot        canonical JSON of the RunConfig
    <out>/ckpt/seed_<s>/latest.vfsk
    <out>/logs/run.log           every log record of the run
    <out>/logs/loss_seed<s>.csv  step,lr,loss
    <out>/metrics.csv            one row per seed
    <out>/eval_curve.csv         seed,step,metrics (when eval.eval_every > 0)
    <out>/report.json            list of RunReports, appended per invocation
    <out>/FAILED                 present when the last invocation failed
"""

import csv
import json
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from .augment import resize_frame
from .checkpoint import load_checkpoint
from .config import RunConfig
from .corpus import SyntheticCorpus, build_corpora
from .errors import ConfigError
from .log import get_logger, remove_file_handlers, setup_logging
from .metrics import center_error, precision_at, segmentation_scores, success_auc
from .model import embed_frames, extract_block_maps
from .objectives import embedding_std
from .propagation import PropagationConfig, propagate_masks
from .tracker import TrackerConfig, encoder_features, track
from .trainer import SiameseState, Trainer, init_state

logger = get_logger("experiment")

METRIC_COLUMNS = ["prop_J", "prop_F", "prop_JF", "track_precision", "track_success",
                  "track_center_error", "embedding_std"]
FAILED_MARKER = "FAILED"


@dataclass
class RunReport:
    """Per-seed metric rows, their mean/std summary, loss curves and provenance."""

    config_hash: str
    rows: List[Dict[str, float]] = field(default_factory=list)
    summary: Dict[str, Dict[str, float]] = field(default_factory=dict)
    loss_curves: Dict[str, List[List[float]]] = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "RunReport":
        return cls(**values)


def summarize(rows: List[Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    summary = {}
    for column in METRIC_COLUMNS:
        values = np.asarray([row[column] for row in rows if column in row], dtype=np.float64)
        if values.size:
            summary[column] = {"mean": float(values.mean()), "std": float(values.std())}
    return summary


def propagation_config(config: RunConfig) -> PropagationConfig:
    p = config.eval.propagation
    return PropagationConfig(topk=p.topk, m_frames=p.m_frames, radius=p.radius,
                             temperature=p.temperature, topk_scope=p.topk_scope)


def evaluate(state: SiameseState, held_out: SyntheticCorpus, config: RunConfig) -> Dict[str, float]:
    """Propagation J/F, tracking precision/success and the collapse probe on held-out clips."""
    arch = state.arch
    params = state.params
    prop_settings = config.eval.propagation
    track_settings = config.eval.tracker
    prop_block = prop_settings.readout_block or arch.intermediate_block
    track_block = track_settings.readout_block or arch.final_block
    prop_cfg = propagation_config(config)
    tracker_cfg = TrackerConfig.from_settings(track_settings)
    features = encoder_features(params, arch, track_block, stride_one_from=min(arch.intermediate_block, track_block))
    reference_extent = prop_settings.reference_extent if prop_settings.scale_radius else None

    seg_rows, precisions, successes, errors = [], [], [], []
    probe = []
    for index, clip in enumerate(held_out.clips()):
        maps = extract_block_maps(clip.frames, params, arch, prop_block, stride_one_from=prop_block)
        result = propagate_masks(maps, clip.gt_masks[0], clip.num_objects + 1, prop_cfg, reference_extent)
        seg_rows.append(segmentation_scores(result.masks, clip.gt_masks, clip.num_objects))
        for obj in range(clip.num_objects):
            gt = clip.gt_boxes[:, obj]
            boxes = track(clip.frames, gt[0], features, tracker_cfg)
            precisions.append(precision_at(boxes[1:], gt[1:], track_settings.precision_threshold))
            successes.append(success_auc(boxes[1:], gt[1:]))
            errors.append(float(np.mean(center_error(boxes[1:], gt[1:]))))
        if index < config.eval.probe_clips:
            size = (arch.input_size, arch.input_size)
            probe += [resize_frame(frame, size) for frame in clip.frames[::5]]

    metrics = {
        "prop_J": float(np.mean([r["J"] for r in seg_rows])) if seg_rows else 0.0,
        "prop_F": float(np.mean([r["F"] for r in seg_rows])) if seg_rows else 0.0,
        "prop_JF": float(np.mean([r["J&F"] for r in seg_rows])) if seg_rows else 0.0,
        "track_precision": float(np.mean(precisions)) if precisions else 0.0,
        "track_success": float(np.mean(successes)) if successes else 0.0,
        "track_center_error": float(np.mean(errors)) if errors else 0.0,
        "embedding_std": embedding_std(embed_frames(np.stack(probe), params, arch)) if len(probe) > 1 else 0.0,
    }
    return metrics


def _read_loss_curve(path: str) -> List[List[float]]:
    if not os.path.exists(path):
        return []
    with open(path, "r", newline="", encoding="utf-8") as f:
        return [[int(r["step"]), float(r["lr"]), float(r["loss"])] for r in csv.DictReader(f)]


class ExperimentRunner:
    """Owns one run directory.

    Args:
        config: Run configuration
        out_dir: Run directory (created if missing)
        callback: Optional RunCallback
    """

    def __init__(self, config: RunConfig, out_dir: str, callback=None):
        self.config = config
        self.out_dir = out_dir
        self.callback = callback
        self.ckpt_root = os.path.join(out_dir, "ckpt")
        self.log_dir = os.path.join(out_dir, "logs")

    def _write_snapshot(self) -> None:
        path = os.path.join(self.out_dir, "config.snapshot")
        text = self.config.to_json()
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                existing = f.read()
            if existing != text:
                raise ConfigError(f"{self.out_dir} already holds a run with a different configuration")
            return
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)

    def _initial_state(self, seed: int, ckpt_dir: str) -> SiameseState:
        latest = os.path.join(ckpt_dir, "latest.vfsk")
        if self.config.run.resume and os.path.exists(latest):
            state = load_checkpoint(latest)
            logger.info(f"Resuming seed {seed} from step {state.step}")
            return state
        return init_state(self.config, seed)

    def run_seed(self, seed: int, train: SyntheticCorpus, held_out: SyntheticCorpus,
                 curve_writer=None) -> Dict[str, float]:
        ckpt_dir = os.path.join(self.ckpt_root, f"seed_{seed}")
        loss_csv = os.path.join(self.log_dir, f"loss_seed{seed}.csv")
        state = self._initial_state(seed, ckpt_dir)
        total = self.config.total_steps()
        if self.callback:
            self.callback.on_start({"seed": seed, "regime": state.arch.regime, "total_steps": total})

        def eval_hook(current: SiameseState) -> Dict[str, float]:
            metrics = evaluate(current, held_out, self.config)
            if curve_writer is not None:
                curve_writer.writerow([seed, current.step] + [repr(metrics[c]) for c in METRIC_COLUMNS])
            return metrics

        trainer = Trainer(self.config, train, self.callback, ckpt_dir=ckpt_dir, loss_csv=loss_csv,
                          eval_hook=eval_hook if self.config.eval.eval_every else None)
        trainer.fit(state, total)
        if self.callback:
            self.callback.on_phase_start("Evaluating", len(held_out))
        metrics = evaluate(state, held_out, self.config)
        if self.callback:
            self.callback.on_eval(state.step, metrics)
        return dict({"seed": seed, "steps": state.step}, **metrics)

    def run(self) -> RunReport:
        started = time.time()
        os.makedirs(self.log_dir, exist_ok=True)
        os.makedirs(self.ckpt_root, exist_ok=True)
        setup_logging(self.config.run.verbose, os.path.join(self.log_dir, "run.log"))
        marker = os.path.join(self.out_dir, FAILED_MARKER)
        curve_file = None
        try:
            self._write_snapshot()
            if os.path.exists(marker):
                os.remove(marker)
            train, held_out = build_corpora(self.config.data, self.callback)
            curve_writer = None
            if self.config.eval.eval_every:
                curve_path = os.path.join(self.out_dir, "eval_curve.csv")
                curve_file = open(curve_path, "w", newline="", encoding="utf-8")
                curve_writer = csv.writer(curve_file)
                curve_writer.writerow(["seed", "step"] + METRIC_COLUMNS)

            rows = [self.run_seed(seed, train, held_out, curve_writer) for seed in self.config.run.seeds]
            report = RunReport(
                config_hash=self.config.config_hash(),
                rows=rows,
                summary=summarize(rows),
                loss_curves={str(seed): _read_loss_curve(os.path.join(self.log_dir, f"loss_seed{seed}.csv"))
                             for seed in self.config.run.seeds},
                wall_clock=time.time() - started,
            )
            self._write_metrics(rows)
            append_report(os.path.join(self.out_dir, "report.json"), report)
            if self.callback:
                self.callback.on_complete({"wall_clock": report.wall_clock, "summary": report.summary})
            return report
        except Exception as exc:
            with open(marker, "w", encoding="utf-8") as f:
                f.write(f"{type(exc).__name__}: {exc}\n")
                f.write(traceback.format_exc())
            if self.callback:
                self.callback.on_error(f"Run failed: {exc}")
            raise
        finally:
            if curve_file:
                curve_file.close()
            remove_file_handlers()

    def _write_metrics(self, rows: List[Dict[str, float]]) -> None:
        with open(os.path.join(self.out_dir, "metrics.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["seed", "steps"] + METRIC_COLUMNS)
            for row in rows:
                writer.writerow([row["seed"], row["steps"]] + [repr(row[c]) for c in METRIC_COLUMNS])


def append_report(path: str, report: RunReport) -> None:
    """Reports accumulate: earlier entries are never rewritten."""
    reports = load_reports(path)
    reports.append(report.to_dict())
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(reports, f, indent=2)
    os.replace(tmp, path)


def load_reports(path: str) -> List[Dict]:
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def run_experiment(config: RunConfig, out_dir: str, callback=None) -> RunReport:
    """Train every seed of `config`, evaluate on held-out clips and write the run directory."""
    return ExperimentRunner(config, out_dir, callback).run()
