"""
Ablation matrix: one run per axis value over shared seeds.

Cells are independent run directories under <out>/<axis>/<cell>; they share
nothing but the (regenerated, seed-determined) corpus, so cells may run in
separate processes.
"""

import csv
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

from .config import ConfigManager, RunConfig
from .errors import ConfigError
from .experiment import METRIC_COLUMNS, run_experiment
from .log import get_logger

logger = get_logger("ablation")

Cell = Tuple[str, Dict[str, Any]]


def _frame_interval() -> List[Cell]:
    cells = [(str(delta), {"sampler.mode": "continuous", "sampler.delta": delta,
                           "sampler.n_frames": 2, "sampler.different_frame": True})
             for delta in (0, 2, 4, 8, 16, 32)]
    cells.append(("D", {"sampler.mode": "distant", "sampler.n_frames": 2, "sampler.different_frame": True}))
    return cells


def _frame_num() -> List[Cell]:
    return [(f"n={n}", {"sampler.mode": "distant", "sampler.n_frames": n}) for n in (2, 4, 8)]


def _switch(key: str) -> List[Cell]:
    return [("off", {key: False}), ("on", {key: True})]


def _negatives() -> List[Cell]:
    cells = []
    for regime, neg in (("without_neg", "no"), ("with_neg", "yes")):
        for color in (False, True):
            cells.append((f"neg={neg},color={'on' if color else 'off'}",
                          {"model.regime": regime, "augment.color": color}))
    return cells


def _augmentation() -> List[Cell]:
    cells = []
    for different in (False, True):
        for color in (False, True):
            for spatial in (False, True):
                label = "diff={},color={},spatial={}".format(*("on" if v else "off" for v in (different, color, spatial)))
                cells.append((label, {"sampler.different_frame": different, "augment.color": color,
                                      "augment.spatial": spatial}))
    return cells


def _depth() -> List[Cell]:
    return [
        ("blocks=4", {"model.channels": [8, 16, 32, 64], "model.strides": [2, 2, 2, 2], "model.final_block": 4}),
        ("blocks=5", {"model.channels": [8, 16, 32, 64, 128], "model.strides": [2, 2, 2, 2, 2],
                      "model.final_block": 5}),
    ]


AXES = {
    "frame_interval": _frame_interval,
    "frame_num": _frame_num,
    "color_aug": lambda: _switch("augment.color"),
    "spatial_aug": lambda: _switch("augment.spatial"),
    "different_frame": lambda: _switch("sampler.different_frame"),
    "negatives": _negatives,
    "augmentation": _augmentation,
    "depth": _depth,
}


@dataclass
class AblationTable:
    """One row per axis value: label, config hash, and mean/std of every metric."""

    axis: str
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def labels(self) -> List[str]:
        return [row["label"] for row in self.rows]

    def to_text(self) -> str:
        header = ["value"] + [f"{c}" for c in METRIC_COLUMNS]
        lines = ["\t".join(header)]
        for row in self.rows:
            cells = [row["label"]] + [f"{row[c]['mean']:.3f}±{row[c]['std']:.3f}" if c in row else "-"
                                      for c in METRIC_COLUMNS]
            lines.append("\t".join(cells))
        return "\n".join(lines)

    def write(self, out_dir: str) -> None:
        with open(os.path.join(out_dir, "comparison.json"), "w", encoding="utf-8") as f:
            json.dump({"axis": self.axis, "rows": self.rows}, f, indent=2)
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["value", "config_hash"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")])
            for row in self.rows:
                writer.writerow([row["label"], row["config_hash"]] +
                                [repr(row[c][s]) if c in row else "" for c in METRIC_COLUMNS for s in ("mean", "std")])


def axis_cells(axis: str, base_config: RunConfig) -> List[Tuple[str, RunConfig]]:
    """Every (label, config) cell of `axis` derived from `base_config`."""
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis '{axis}' (choose from {', '.join(sorted(AXES))})")
    return [(label, base_config.with_overrides(overrides)) for label, overrides in AXES[axis]()]


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") or "cell"


def _run_cell(config_values: Dict[str, Any], out_dir: str) -> Dict[str, Any]:
    """Process entry point: rebuild the config and run it."""
    config = RunConfig.from_dict(config_values)
    report = run_experiment(config, out_dir)
    return {"config_hash": report.config_hash, "summary": report.summary}


def run_ablation(axis: str, base_config: RunConfig, out_dir: str, workers: Any = 1, callback=None) -> AblationTable:
    """Run every cell of `axis` and return the comparison table.

    Args:
        axis: One of AXES
        base_config: Configuration every cell starts from
        out_dir: Root directory; cells go to <out_dir>/<axis>/<cell>
        workers: Parallel cell processes ("auto" or a number); 1 runs in-process
        callback: Optional RunCallback (in-process runs only)
    """
    cells = axis_cells(axis, base_config)
    axis_dir = os.path.join(out_dir, axis)
    os.makedirs(axis_dir, exist_ok=True)
    workers = ConfigManager.get_optimal_workers(workers) if workers != 1 else 1
    logger.info(f"Ablation '{axis}': {len(cells)} cells, {workers} worker(s)")

    results: Dict[str, Dict[str, Any]] = {}
    if workers == 1:
        if callback:
            callback.on_phase_start(f"Ablation {axis}", len(cells))
        for done, (label, config) in enumerate(cells, start=1):
            report = run_experiment(config, os.path.join(axis_dir, _slug(label)), callback)
            results[label] = {"config_hash": report.config_hash, "summary": report.summary}
            logger.info(f"Cell {label} done ({done}/{len(cells)})")
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(_run_cell, config.to_dict(), os.path.join(axis_dir, _slug(label))): label
                       for label, config in cells}
            for done, future in enumerate(as_completed(futures), start=1):
                label = futures[future]
                results[label] = future.result()
                logger.info(f"Cell {label} done ({done}/{len(cells)})")

    table = AblationTable(axis=axis)
    for label, _ in cells:
        row = {"label": label, "config_hash": results[label]["config_hash"]}
        row.update(results[label]["summary"])
        table.rows.append(row)
    table.write(axis_dir)
    logger.info("\n" + table.to_text())
    return table
