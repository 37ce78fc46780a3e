"""
Tests for the training step, schedule and loop.
"""

import csv
import os
import tempfile

import numpy as np
import pytest

from conftest import tiny_config
from vfs_lab import trainer as trainer_module
from vfs_lab.corpus import build_corpora
from vfs_lab.errors import TrainingError
from vfs_lab.loader import BatchLoader
from vfs_lab.objectives import bank_enqueue
from vfs_lab.tensor import Tensor, grad_check
from vfs_lab.trainer import Trainer, init_state, lr_schedule, make_loss_graph, train_step


def _snapshot(params):
    return {name: t.data.copy() for name, t in params.tensors.items()}


def test_lr_schedule_examples():
    assert lr_schedule(0, 100, 0.05) == pytest.approx(0.05)
    assert lr_schedule(50, 100, 0.05) == pytest.approx(0.025)
    assert lr_schedule(100, 100, 0.05) == pytest.approx(0.0, abs=1e-15)
    assert lr_schedule(150, 100, 0.05) == pytest.approx(0.0, abs=1e-15)
    assert lr_schedule(3, 0, 0.05) == 0.05
    values = [lr_schedule(s, 20, 0.1) for s in range(21)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_init_state_per_regime():
    config = tiny_config()
    state = init_state(config, seed=1)
    assert state.step == 0 and state.target_params is None and state.bank is None
    assert state.target is state.params

    neg = init_state(tiny_config({"model.regime": "with_neg"}), seed=1)
    assert neg.bank.capacity == 16 and len(neg.bank) == 0
    assert all(not t.requires_grad for t in neg.target_params.tensors.values())
    for name in neg.momentum_names():
        assert neg.target_params[name].data.tobytes() == neg.params[name].data.tobytes()


def test_training_is_deterministic(config, corpora):
    train, _ = corpora
    runs = []
    for _ in range(2):
        state = init_state(config, seed=3)
        history = Trainer(config, train).fit(state)
        runs.append((history, _snapshot(state.params)))
    assert [row[2] for row in runs[0][0]] == [row[2] for row in runs[1][0]]
    for name, value in runs[0][1].items():
        assert value.tobytes() == runs[1][1][name].tobytes()


def test_zero_learning_rate_leaves_weights_unchanged(corpora):
    config = tiny_config({"optim.base_lr": 0.0})
    train, _ = corpora
    state = init_state(config, seed=2)
    before = _snapshot(state.params)
    batch = BatchLoader(train, config, seed=2).batch_for_step(0)
    state, loss = train_step(state, batch, config)
    assert np.isfinite(loss) and state.step == 1
    for name, value in before.items():
        assert state.params[name].data.tobytes() == value.tobytes()


@pytest.mark.parametrize("regime,names", [
    ("without_neg", ["predictor.1.weight", "predictor.1.bias"]),
    ("with_neg", ["projector.1.weight", "backbone.2.bn.beta"]),
])
def test_step_gradient_matches_finite_differences(regime, names):
    config = tiny_config({"model.regime": regime, "model.precision": "float64"})
    train, _ = build_corpora(config.data)
    state = init_state(config, seed=4)
    if state.bank is not None:
        rows = np.random.default_rng(5).standard_normal((16, 8))
        bank_enqueue(state.bank, rows / np.linalg.norm(rows, axis=1, keepdims=True))
    batch = BatchLoader(train, config, seed=4).batch_for_step(0)
    graph = make_loss_graph(state, batch, config, names)
    assert grad_check(graph, [state.params[name] for name in names]) <= 1e-4


def test_step_gradient_over_many_batches(corpora):
    """25 batches per regime, checked through the whole encode and loss graph."""
    train, _ = corpora
    for regime, name in (("without_neg", "predictor.1.bias"), ("with_neg", "backbone.2.bn.beta")):
        config = tiny_config({"model.regime": regime, "model.precision": "float64"})
        loader = BatchLoader(train, config, seed=11)
        for trial in range(25):
            state = init_state(config, seed=100 + trial)
            if state.bank is not None:
                rows = np.random.default_rng(trial).standard_normal((16, 8))
                bank_enqueue(state.bank, rows / np.linalg.norm(rows, axis=1, keepdims=True))
            graph = make_loss_graph(state, loader.batch_for_step(trial), config, [name])
            assert grad_check(graph, [state.params[name]]) <= 1e-4


def test_with_neg_step_updates_target_and_bank(corpora):
    config = tiny_config({"model.regime": "with_neg", "objective.momentum": 0.9})
    train, _ = corpora
    state = init_state(config, seed=6)
    batch = BatchLoader(train, config, seed=6).batch_for_step(0)
    # Make the two sides differ so the momentum update is visible.
    state.params.assign({name: t.data * 1.5 for name, t in state.params.tensors.items()
                         if name.endswith("conv.weight")})
    query_before = _snapshot(state.params)
    target_before = _snapshot(state.target_params)

    state, _ = train_step(state, batch, config)
    for name in state.momentum_names():
        expected = (0.9 * target_before[name] + 0.1 * query_before[name]).astype(target_before[name].dtype)
        np.testing.assert_allclose(state.target_params[name].data, expected, rtol=1e-6, atol=1e-7)
        assert state.target_params[name].grad is None
    assert len(state.bank) == batch.size * batch.views
    assert state.bank.cursor == batch.size * batch.views
    norms = np.linalg.norm(state.bank.active().astype(np.float64), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-5)


def test_batch_loss_reaches_backbone_and_predictor(config, corpora):
    train, _ = corpora
    state = init_state(config, seed=7)
    batch = BatchLoader(train, config, seed=7).batch_for_step(0)
    loss, _ = trainer_module.batch_loss(state, batch, config)
    loss.backward()
    assert state.params["predictor.1.weight"].grad is not None
    assert np.any(state.params["backbone.1.conv.weight"].grad != 0)


def test_nonfinite_loss_raises_with_dump(monkeypatch, config, corpora):
    train, _ = corpora
    state = init_state(config, seed=8)
    batch = BatchLoader(train, config, seed=8).batch_for_step(0)
    monkeypatch.setattr(trainer_module, "batch_loss",
                        lambda *args, **kwargs: (Tensor(np.array(np.nan)), np.zeros((0, 8))))
    with tempfile.TemporaryDirectory() as temp_dir:
        with pytest.raises(TrainingError) as info:
            train_step(state, batch, config, dump_dir=temp_dir)
        assert os.path.exists(info.value.dump_path)
        assert state.step == 0


def test_fit_writes_loss_csv(config, corpora):
    train, _ = corpora
    with tempfile.TemporaryDirectory() as temp_dir:
        loss_csv = os.path.join(temp_dir, "loss.csv")
        state = init_state(config, seed=9)
        history = Trainer(config, train, ckpt_dir=temp_dir, loss_csv=loss_csv).fit(state)
        assert [row[0] for row in history] == [0, 1]
        assert state.step == config.total_steps() == 2
        with open(loss_csv, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["step", "lr", "loss"]
        assert [int(r[0]) for r in rows[1:]] == [0, 1]
        assert float(rows[1][1]) == pytest.approx(config.optim.base_lr)
        assert os.path.exists(os.path.join(temp_dir, "latest.vfsk"))
        assert Trainer(config, train).fit(state) == []


def test_loss_falls_over_200_steps(config, corpora):
    train, _ = corpora
    state = init_state(config, seed=12)
    loader = BatchLoader(train, config, seed=12)
    first = loader.batch_for_step(0)
    losses = []
    for step in range(200):
        state, loss = train_step(state, loader.batch_for_step(step), config, total_steps=200)
        losses.append(loss)
    assert state.step == 200 and all(np.isfinite(losses))
    after, _ = trainer_module.batch_loss(state, first, config)
    assert after.item() < losses[0]
