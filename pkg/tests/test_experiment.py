"""
Tests for experiment runs and their run directories.
"""

import csv
import json
import os
import tempfile

import numpy as np
import pytest

from conftest import tiny_config
from vfs_lab.config import ConfigManager
from vfs_lab.errors import ConfigError
from vfs_lab.experiment import FAILED_MARKER, METRIC_COLUMNS, load_reports, run_experiment, summarize


def test_zero_step_run_is_evaluated():
    config = tiny_config({"optim.max_steps": 0})
    with tempfile.TemporaryDirectory() as temp_dir:
        report = run_experiment(config, temp_dir)
        assert len(report.rows) == 1
        row = report.rows[0]
        assert row["steps"] == 0
        for column in METRIC_COLUMNS:
            assert np.isfinite(row[column])
        assert 0.0 <= row["prop_J"] <= 1.0 and 0.0 <= row["track_precision"] <= 1.0
        assert report.loss_curves == {"1": []}
        for name in ("config.snapshot", "metrics.csv", "report.json", os.path.join("logs", "run.log")):
            assert os.path.exists(os.path.join(temp_dir, name))
        assert ConfigManager.load_snapshot(os.path.join(temp_dir, "config.snapshot")) == config
        assert not os.path.exists(os.path.join(temp_dir, FAILED_MARKER))


def test_runs_are_reproducible():
    config = tiny_config()
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        first = run_experiment(config, a)
        second = run_experiment(config, b)
    assert first.rows == second.rows
    assert first.loss_curves == second.loss_curves
    assert first.config_hash == second.config_hash == config.config_hash()


def test_three_seeds_and_resume():
    config = tiny_config({"run.seeds": [1, 2, 3]})
    with tempfile.TemporaryDirectory() as temp_dir:
        report = run_experiment(config, temp_dir)
        assert [row["seed"] for row in report.rows] == [1, 2, 3]
        assert all(row["steps"] == config.total_steps() for row in report.rows)
        assert set(report.summary) == set(METRIC_COLUMNS)
        values = [row["prop_J"] for row in report.rows]
        assert report.summary["prop_J"]["mean"] == pytest.approx(np.mean(values))
        assert all(len(curve) == 2 for curve in report.loss_curves.values())
        for seed in (1, 2, 3):
            assert os.path.exists(os.path.join(temp_dir, "ckpt", f"seed_{seed}", "latest.vfsk"))
        with open(os.path.join(temp_dir, "metrics.csv"), newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["seed", "steps"] + METRIC_COLUMNS and len(rows) == 4

        # A second invocation resumes from the finished checkpoints.
        again = run_experiment(config, temp_dir)
        assert again.rows == report.rows
        reports = load_reports(os.path.join(temp_dir, "report.json"))
        assert len(reports) == 2
        assert reports[0]["rows"] == reports[1]["rows"]


def test_changed_config_is_refused():
    with tempfile.TemporaryDirectory() as temp_dir:
        run_experiment(tiny_config({"optim.max_steps": 0}), temp_dir)
        with pytest.raises(ConfigError):
            run_experiment(tiny_config({"optim.max_steps": 0, "objective.tau": 0.5}), temp_dir)
        marker = os.path.join(temp_dir, FAILED_MARKER)
        assert os.path.exists(marker)
        with open(marker, encoding="utf-8") as f:
            assert f.readline().startswith("ConfigError")
        with open(os.path.join(temp_dir, "config.snapshot"), encoding="utf-8") as f:
            assert json.load(f)["objective"]["tau"] == 0.2

        run_experiment(tiny_config({"optim.max_steps": 0}), temp_dir)
        assert not os.path.exists(marker)


def test_eval_curve_is_written():
    config = tiny_config({"eval.eval_every": 1})
    with tempfile.TemporaryDirectory() as temp_dir:
        run_experiment(config, temp_dir)
        with open(os.path.join(temp_dir, "eval_curve.csv"), newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    assert rows[0] == ["seed", "step"] + METRIC_COLUMNS
    assert [int(r[1]) for r in rows[1:]] == [1, 2]


def test_summarize():
    rows = [{"prop_J": 0.2}, {"prop_J": 0.4}]
    summary = summarize(rows)
    assert summary["prop_J"]["mean"] == pytest.approx(0.3)
    assert summary["prop_J"]["std"] == pytest.approx(0.1)
    assert "track_precision" not in summary
