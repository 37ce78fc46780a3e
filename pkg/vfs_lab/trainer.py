"""
Siamese training: state, optimizer, learning-rate schedule and the step.

One training thread owns the SiameseState. A step in the with-negatives
regime runs the momentum update first, reads the bank as it stood at step
start, takes the SGD step on the predictor-side parameters, then enqueues
the step's target embeddings.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .config import ConfigManager, RunConfig
from .corpus import SyntheticCorpus
from .errors import TrainingError
from .loader import Batch, BatchLoader
from .log import get_logger
from .model import PREDICTOR, TARGET, ArchSpec, EncoderParams, encode, init_encoder_params, parameter_norms
from .objectives import (WITH_NEG, NegativeBank, bank_enqueue, build_affinity, momentum_update,
                         multi_pair_loss)
from .seeding import make_rng
from .tensor import ComputeGraph, Tensor

logger = get_logger("trainer")


@dataclass
class SiameseState:
    """Everything a run needs to continue bit-identically.

    `target_params` is None in the without-negatives regime: the target side
    then uses `params` itself. `rng_state` is the run seed; every random draw
    is a named stream of it keyed by step or epoch.
    """

    arch: ArchSpec
    params: EncoderParams
    target_params: Optional[EncoderParams] = None
    bank: Optional[NegativeBank] = None
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_state: int = 0

    @property
    def target(self) -> EncoderParams:
        return self.target_params if self.target_params is not None else self.params

    def momentum_names(self) -> List[str]:
        """Parameters shared by both sides (everything except the predictor head)."""
        return [name for name in self.params.names() if not name.startswith("predictor.")]


def init_state(config: RunConfig, seed: int) -> SiameseState:
    arch = ArchSpec.from_config(config.model)
    params = init_encoder_params(arch, make_rng(seed, "init"))
    state = SiameseState(arch=arch, params=params, step=0, rng_state=int(seed),
                         velocity={name: np.zeros_like(t.data) for name, t in params.tensors.items()})
    if arch.regime == WITH_NEG:
        state.target_params = params.copy(requires_grad=False, drop_predictor=True)
        state.bank = NegativeBank(config.objective.bank_size, arch.proj_dim, arch.dtype)
    return state


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        return float(base_lr)
    step = min(max(step, 0), total_steps)
    return float(base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))


def sgd_update(params: EncoderParams, velocity: Dict[str, np.ndarray], lr: float,
               momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """v = momentum*v + (g + wd*theta); theta -= lr*v. Missing gradients count as zero."""
    for name, tensor in params.tensors.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        buf = velocity.setdefault(name, np.zeros_like(tensor.data))
        buf *= momentum
        buf += grad + weight_decay * tensor.data
        tensor.data = tensor.data - (lr * buf).astype(tensor.dtype, copy=False)
        tensor.grad = None


def _pair_loss(p: Tensor, z: Tensor, videos: int, views: int, regime: str, tau: float,
               negatives: Optional[np.ndarray]) -> Tensor:
    total = None
    for v in range(videos):
        aff = build_affinity(ops.narrow(p, 0, v * views, (v + 1) * views),
                             ops.narrow(z, 0, v * views, (v + 1) * views),
                             negatives if regime == WITH_NEG else None)
        loss = multi_pair_loss(aff, regime, tau)
        total = loss if total is None else ops.add(total, loss)
    return ops.scale(total, 1.0 / videos)


def batch_loss(state: SiameseState, batch: Batch, config: RunConfig,
               negatives: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
    """Loss graph for one batch plus the target embeddings it used."""
    arch = state.arch
    b, q = batch.size, batch.views

    def flat(frames: np.ndarray) -> np.ndarray:
        return frames.reshape((b * q,) + frames.shape[2:])

    def side_loss(pred_frames, target_frames):
        p = encode(flat(pred_frames), state.params, PREDICTOR, arch).embedding
        z = encode(flat(target_frames), state.target, TARGET, arch).embedding
        return _pair_loss(p, z, b, q, arch.regime, config.objective.tau, negatives), z

    loss, z = side_loss(batch.pred_frames, batch.target_frames)
    targets = [z.data]
    if config.objective.symmetric:
        swapped, z2 = side_loss(batch.target_frames, batch.pred_frames)
        loss = ops.scale(ops.add(loss, swapped), 0.5)
        targets.append(z2.data)
    return loss, np.concatenate(targets, axis=0)


def dump_nonfinite(state: SiameseState, loss: float, dump_dir: str) -> str:
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"nonfinite_step{state.step}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"step": state.step, "loss": repr(loss), "param_norms": parameter_norms(state.params)}, f, indent=2)
    return path


def train_step(state: SiameseState, batch: Batch, config: RunConfig, total_steps: Optional[int] = None,
               dump_dir: Optional[str] = None) -> Tuple[SiameseState, float]:
    """One optimisation step; mutates and returns `state` with the scalar loss."""
    total = config.total_steps() if total_steps is None else total_steps
    lr = lr_schedule(state.step, total, config.optim.base_lr)
    with_neg = state.arch.regime == WITH_NEG

    negatives = None
    if with_neg:
        updated = momentum_update(state.params.subset(state.momentum_names()),
                                  state.target_params.tensors, config.objective.momentum)
        state.target_params.assign(updated)
        negatives = state.bank.active()

    loss, targets = batch_loss(state, batch, config, negatives)
    value = loss.item()
    if not np.isfinite(value):
        path = dump_nonfinite(state, value, dump_dir or os.getcwd())
        raise TrainingError(f"non-finite loss {value} at step {state.step}", path)

    loss.backward()
    sgd_update(state.params, state.velocity, lr, config.optim.momentum, config.optim.weight_decay)

    if with_neg and state.bank.capacity > 0:
        bank_enqueue(state.bank, targets[-state.bank.capacity:])
    state.step += 1
    return state, value


def make_loss_graph(state: SiameseState, batch: Batch, config: RunConfig, names: List[str]) -> ComputeGraph:
    """Scalar graph of the batch loss as a function of the named parameters.

    Used for finite-difference checks of the whole step's gradient flow.
    """
    def fn(*values: Tensor) -> Tensor:
        saved = {name: state.params.tensors[name] for name in names}
        try:
            for name, value in zip(names, values):
                state.params.tensors[name] = value
            loss, _ = batch_loss(state, batch, config, state.bank.active() if state.bank is not None else None)
            return loss
        finally:
            state.params.tensors.update(saved)

    shapes = [state.params[name].shape for name in names]
    return ComputeGraph(fn, input_shapes=shapes, name="batch_loss")


def _truncate_loss_csv(path: str, step: int) -> None:
    """Drop rows at or after `step` left by a run that stopped between checkpoints."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    kept = rows[:1] + [row for row in rows[1:] if row and int(row[0]) < step]
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(kept)


class Trainer:
    """Runs the training loop for one seed.

    Args:
        config: Run configuration
        corpus: Training clips
        callback: Optional RunCallback
        ckpt_dir: Directory for `latest.vfsk` and failure dumps
        loss_csv: Path of the per-step `step,lr,loss` file
        eval_hook: Called as eval_hook(state) every `eval.eval_every` steps
    """

    def __init__(self, config: RunConfig, corpus: SyntheticCorpus, callback=None,
                 ckpt_dir: Optional[str] = None, loss_csv: Optional[str] = None,
                 eval_hook: Optional[Callable[[SiameseState], Dict[str, float]]] = None):
        self.config = config
        self.corpus = corpus
        self.callback = callback
        self.ckpt_dir = ckpt_dir
        self.loss_csv = loss_csv
        self.eval_hook = eval_hook
        self.num_workers = ConfigManager.get_optimal_workers(config.optim.num_workers)

    def _save_latest(self, state: SiameseState) -> None:
        if self.ckpt_dir:
            from .checkpoint import save_checkpoint
            save_checkpoint(state, os.path.join(self.ckpt_dir, "latest.vfsk"))

    def fit(self, state: SiameseState, total_steps: Optional[int] = None,
            stop_step: Optional[int] = None) -> List[Tuple[int, float, float]]:
        """Train from `state.step` to `stop_step` (default: total_steps).

        Returns:
            List of (step, lr, loss) rows for the steps run
        """
        total = self.config.total_steps() if total_steps is None else total_steps
        stop = total if stop_step is None else min(stop_step, total)
        history: List[Tuple[int, float, float]] = []
        if state.step >= stop:
            return history

        loader = BatchLoader(self.corpus, self.config, state.rng_state, self.num_workers,
                             self.config.optim.prefetch)
        csv_file = None
        if self.loss_csv:
            fresh = not os.path.exists(self.loss_csv) or state.step == 0
            if not fresh:
                _truncate_loss_csv(self.loss_csv, state.step)
            csv_file = open(self.loss_csv, "w" if fresh else "a", newline="", encoding="utf-8")
            writer = csv.writer(csv_file)
            if fresh:
                writer.writerow(["step", "lr", "loss"])

        if self.callback:
            self.callback.on_phase_start("Training", stop - state.step)
        eval_every = self.config.eval.eval_every
        checkpoint_every = self.config.run.checkpoint_every
        try:
            for batch in loader.iterate(state.step, stop):
                step = state.step
                lr = lr_schedule(step, total, self.config.optim.base_lr)
                try:
                    state, loss = train_step(state, batch, self.config, total, dump_dir=self.ckpt_dir)
                except TrainingError:
                    self._save_latest(state)
                    raise
                history.append((step, lr, loss))
                if csv_file:
                    writer.writerow([step, repr(lr), repr(loss)])
                if self.callback:
                    self.callback.on_step(step, lr, loss)
                if checkpoint_every and state.step % checkpoint_every == 0:
                    self._save_latest(state)
                if self.eval_hook and eval_every and state.step % eval_every == 0:
                    metrics = self.eval_hook(state)
                    if self.callback:
                        self.callback.on_eval(state.step, metrics)
        finally:
            if csv_file:
                csv_file.close()
        self._save_latest(state)
        return history
