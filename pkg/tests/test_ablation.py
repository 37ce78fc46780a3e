"""
Tests for the ablation matrix.
"""

import os
import tempfile

import pytest

from conftest import tiny_config
from vfs_lab.ablation import AXES, axis_cells, run_ablation
from vfs_lab.errors import ConfigError
from vfs_lab.experiment import run_experiment


def test_axis_labels():
    base = tiny_config()
    assert [label for label, _ in axis_cells("frame_interval", base)] == ["0", "2", "4", "8", "16", "32", "D"]
    assert [label for label, _ in axis_cells("frame_num", base)] == ["n=2", "n=4", "n=8"]
    assert [label for label, _ in axis_cells("color_aug", base)] == ["off", "on"]
    assert len(axis_cells("augmentation", base)) == 8
    assert [label for label, _ in axis_cells("negatives", base)] == [
        "neg=no,color=off", "neg=no,color=on", "neg=yes,color=off", "neg=yes,color=on"]


def test_cells_change_only_their_axis():
    base = tiny_config()
    for label, config in axis_cells("frame_interval", base):
        assert config.model == base.model and config.optim == base.optim
        if label == "D":
            assert config.sampler.mode == "distant"
        else:
            assert config.sampler.mode == "continuous" and config.sampler.delta == int(label)
    regimes = {config.model.regime for _, config in axis_cells("negatives", base)}
    assert regimes == {"with_neg", "without_neg"}


def test_every_axis_builds_valid_configs():
    base = tiny_config()
    for axis in AXES:
        hashes = [config.config_hash() for _, config in axis_cells(axis, base)]
        assert len(set(hashes)) == len(hashes)


def test_unknown_axis():
    with pytest.raises(ConfigError):
        axis_cells("learning_rate", tiny_config())


def test_run_ablation_writes_comparison():
    base = tiny_config({"optim.max_steps": 1})
    with tempfile.TemporaryDirectory() as temp_dir:
        table = run_ablation("color_aug", base, temp_dir)
        assert table.labels() == ["off", "on"]
        assert all("prop_J" in row for row in table.rows)
        for name in ("comparison.csv", "comparison.json"):
            assert os.path.exists(os.path.join(temp_dir, "color_aug", name))
        assert os.path.exists(os.path.join(temp_dir, "color_aug", "off", "report.json"))
        assert "off" in table.to_text()


@pytest.mark.parametrize("workers", [1, 2])
def test_cell_metrics_match_a_standalone_run(workers):
    base = tiny_config({"optim.max_steps": 1})
    with tempfile.TemporaryDirectory() as temp_dir:
        table = run_ablation("color_aug", base, os.path.join(temp_dir, "matrix"), workers)
        for (label, config), row in zip(axis_cells("color_aug", base), table.rows):
            report = run_experiment(config, os.path.join(temp_dir, "alone", label))
            assert row["label"] == label
            assert row["config_hash"] == report.config_hash
            for column, values in report.summary.items():
                assert row[column] == values
