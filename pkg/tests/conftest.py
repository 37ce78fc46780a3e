"""Shared fixtures: a configuration small enough to train in a test."""

import pytest

from vfs_lab.config import RunConfig
from vfs_lab.corpus import build_corpora

TINY = {
    "data": {"train_clips": 4, "eval_clips": 1, "height": 24, "width": 24, "num_frames": 8,
             "num_objects": 1, "object_size": [6, 8], "workers": 1},
    "sampler": {"delta": 2},
    "model": {"input_size": 16, "channels": [4, 8], "strides": [2, 2], "intermediate_block": 1,
              "final_block": 2, "proj_hidden": 16, "proj_dim": 8, "pred_hidden": 8},
    "objective": {"bank_size": 16},
    "optim": {"batch_size": 2, "epochs": 1, "num_workers": 1, "base_lr": 0.05},
    "run": {"seeds": [1], "checkpoint_every": 0},
}


def tiny_config(overrides=None) -> RunConfig:
    """The tiny configuration with dotted-path overrides."""
    return RunConfig.from_dict(TINY).with_overrides(overrides or {})


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def corpora(config):
    return build_corpora(config.data)
