"""
Directional training experiments on synthetic clips.

These train real models for minutes; run them with `pytest -m slow`.
"""

import math

import numpy as np
import pytest

from vfs_lab.augment import resize_frame
from vfs_lab.config import RunConfig
from vfs_lab.corpus import build_corpora
from vfs_lab.experiment import evaluate
from vfs_lab.model import embed_frames
from vfs_lab.objectives import embedding_std
from vfs_lab.trainer import Trainer, init_state

SEEDS = (1, 2, 3)

# About 190 steps of 16 clips per run.
BASE = {
    "data": {"train_clips": 200, "eval_clips": 6, "num_frames": 24, "workers": "auto"},
    "optim": {"batch_size": 16, "epochs": 15, "num_workers": "auto"},
    "eval": {"probe_clips": 6},
}


def _config(overrides=None):
    return RunConfig.from_dict(BASE).with_overrides(overrides or {})


def _train_and_evaluate(config, seed, corpora):
    train, held_out = corpora
    state = init_state(config, seed)
    Trainer(config, train).fit(state)
    return evaluate(state, held_out, config)


@pytest.mark.slow
def test_training_beats_random_initialisation():
    config = _config()
    corpora = build_corpora(config.data)
    trained, baseline = [], []
    for seed in SEEDS:
        baseline.append(evaluate(init_state(config, seed), corpora[1], config))
        trained.append(_train_and_evaluate(config, seed, corpora))
    for t, b in zip(trained, baseline):
        assert t["track_center_error"] < b["track_center_error"]
    gain_j = np.mean([t["prop_J"] for t in trained]) - np.mean([b["prop_J"] for b in baseline])
    gain_p = np.mean([t["track_precision"] for t in trained]) - np.mean([b["track_precision"] for b in baseline])
    assert gain_j >= 0.15
    assert gain_p >= 0.10


@pytest.mark.slow
def test_distant_sampling_beats_identical_frames():
    distant = _config({"sampler.mode": "distant"})
    identical = _config({"sampler.mode": "continuous", "sampler.delta": 0})
    corpora = build_corpora(distant.data)
    diffs = [_train_and_evaluate(distant, seed, corpora)["prop_J"] -
             _train_and_evaluate(identical, seed, corpora)["prop_J"] for seed in SEEDS]
    assert sum(d > 0 for d in diffs) >= 2
    assert np.mean(diffs) > 0


@pytest.mark.slow
def test_removing_stop_gradient_and_predictor_collapses():
    faithful = _config({"optim.max_steps": 300, "optim.epochs": 0})
    collapsing = faithful.with_overrides({"model.stop_gradient": False, "model.predictor_head": False})
    corpora = build_corpora(faithful.data)
    threshold = 0.1 / math.sqrt(faithful.model.proj_dim)
    probe = np.concatenate([clip.frames[::4] for clip in corpora[1].clips()])
    for seed in SEEDS:
        for config, collapses in ((faithful, False), (collapsing, True)):
            state = init_state(config, seed)
            Trainer(config, corpora[0]).fit(state)
            size = (state.arch.input_size, state.arch.input_size)
            frames = np.stack([resize_frame(f, size) for f in probe])
            std = embedding_std(embed_frames(frames, state.params, state.arch))
            assert (std < threshold) == collapses
