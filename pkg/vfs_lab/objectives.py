"""
Similarity objectives, the momentum update and the negative bank.

Without negatives the loss is the cosine distance 2 - 2 p.z; with negatives
it is InfoNCE against a FIFO bank of past target embeddings. Targets and bank
entries are constants for the loss: only predictor-side values get gradients.
"""

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Union

import numpy as np

from . import ops
from .errors import ContractError, ParameterError
from .tensor import Tensor, as_tensor

WITH_NEG = "with_neg"
WITHOUT_NEG = "without_neg"
REGIMES = (WITH_NEG, WITHOUT_NEG)

UNIT_TOLERANCE = 1e-3


def _check_unit(x: Tensor, what: str, tol: float = UNIT_TOLERANCE) -> None:
    norms = np.linalg.norm(np.atleast_2d(x.data), axis=1)
    if norms.size and np.max(np.abs(norms - 1.0)) > tol:
        raise ContractError(f"{what} must be unit-norm (max deviation {np.max(np.abs(norms - 1.0)):.2e})")


def _as_rows(x: Union[Tensor, np.ndarray]) -> Tensor:
    x = as_tensor(x)
    return ops.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x


class NegativeBank:
    """FIFO ring of K unit-norm embeddings.

    Args:
        capacity: K, the number of stored negatives once warm
        dim: Embedding dimension
        dtype: Storage dtype
    """

    def __init__(self, capacity: int, dim: int, dtype=np.float32):
        if capacity < 0:
            raise ParameterError(f"bank capacity must be non-negative, got {capacity}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.entries = np.zeros((self.capacity, self.dim), dtype=dtype)
        self.cursor = 0
        self.filled = 0

    @property
    def is_warm(self) -> bool:
        return self.filled >= self.capacity

    def active(self) -> np.ndarray:
        """Entries used as negatives: the filled prefix before warm-up, all K after."""
        return self.entries[:self.filled].copy()

    def copy(self) -> "NegativeBank":
        clone = NegativeBank(self.capacity, self.dim, self.entries.dtype)
        clone.entries = self.entries.copy()
        clone.cursor = self.cursor
        clone.filled = self.filled
        return clone

    def __len__(self) -> int:
        return self.filled


def bank_enqueue(bank: NegativeBank, batch: Union[Tensor, np.ndarray]) -> NegativeBank:
    """Write `batch` over the oldest entries; capacity never changes.

    Rows are renormalised in float64 before storage so stored entries stay
    unit-norm in the bank dtype.
    """
    rows = np.atleast_2d(batch.data if isinstance(batch, Tensor) else np.asarray(batch)).astype(np.float64)
    if rows.shape[0] == 0:
        return bank
    if rows.shape[1] != bank.dim:
        raise ContractError(f"bank stores {bank.dim}-d entries, got {rows.shape[1]}-d")
    if rows.shape[0] > bank.capacity:
        raise ContractError(f"cannot enqueue {rows.shape[0]} entries into a bank of {bank.capacity}")
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.max(np.abs(norms - 1.0)) > UNIT_TOLERANCE:
        raise ContractError("bank entries must be unit-norm")
    rows = rows / norms
    positions = (bank.cursor + np.arange(rows.shape[0])) % bank.capacity
    bank.entries[positions] = rows.astype(bank.entries.dtype)
    bank.cursor = int((bank.cursor + rows.shape[0]) % bank.capacity)
    bank.filled = min(bank.capacity, bank.filled + rows.shape[0])
    return bank


def cosine_loss(p: Tensor, z: Tensor) -> Tensor:
    """2 - 2 p.z for unit vectors (averaged over rows); gradient reaches p only."""
    p, z = _as_rows(p), _as_rows(z)
    if p.shape != z.shape:
        raise ContractError(f"cosine_loss: p {p.shape} and z {z.shape} differ")
    _check_unit(p, "p")
    _check_unit(z, "z")
    similarity = ops.mean(ops.rowwise_dot(p, ops.stop_gradient(z)))
    return ops.sub(2.0, ops.scale(similarity, 2.0))


def _bank_rows(bank: Optional[Union[NegativeBank, np.ndarray]], dim: int, dtype) -> np.ndarray:
    if bank is None:
        return np.zeros((0, dim), dtype=dtype)
    if isinstance(bank, NegativeBank):
        return bank.active().astype(dtype, copy=False)
    return np.asarray(bank, dtype=dtype).reshape(-1, dim)


def infonce_loss(p: Tensor, z: Tensor, bank: Optional[Union[NegativeBank, np.ndarray]], tau: float) -> Tensor:
    """-log(exp(p.z/tau) / (exp(p.z/tau) + sum_k exp(p.u_k/tau))), averaged over rows.

    z and the bank are constants; with an empty bank the loss is exactly 0.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    p, z = _as_rows(p), _as_rows(z)
    if p.shape != z.shape:
        raise ContractError(f"infonce_loss: p {p.shape} and z {z.shape} differ")
    negatives = Tensor(_bank_rows(bank, p.shape[1], p.dtype))
    _check_unit(negatives, "bank entries")
    positive = ops.reshape(ops.rowwise_dot(p, ops.stop_gradient(z)), (p.shape[0], 1))
    negative = ops.matmul(p, ops.transpose(negatives))
    logits = ops.scale(ops.concat([positive, negative], axis=1), 1.0 / tau)
    log_prob = ops.narrow(ops.log_softmax(logits, axis=1), 1, 0, 1)
    return ops.neg(ops.mean(log_prob))


def momentum_update(theta: Mapping[str, Union[np.ndarray, Tensor]], xi: Mapping[str, Union[np.ndarray, Tensor]],
                    m: float) -> Dict[str, np.ndarray]:
    """Elementwise m*xi + (1-m)*theta over congruent parameter sets."""
    if not 0.0 <= m < 1.0:
        raise ParameterError(f"momentum must lie in [0, 1), got {m}")
    if set(theta) != set(xi):
        raise ContractError("momentum_update: parameter names differ")
    updated = {}
    for name, target in xi.items():
        t = target.data if isinstance(target, Tensor) else np.asarray(target)
        s = theta[name].data if isinstance(theta[name], Tensor) else np.asarray(theta[name])
        if t.shape != s.shape:
            raise ContractError(f"momentum_update: '{name}' has shapes {s.shape} and {t.shape}")
        updated[name] = (m * t + (1.0 - m) * s).astype(t.dtype, copy=False)
    return updated


@dataclass
class AffinityMatrix:
    """Pairwise similarities: n/2 predictor rows against n/2 targets (+ K bank columns)."""

    values: Tensor
    num_targets: int
    num_negatives: int
    has_bank: bool

    @property
    def shape(self):
        return self.values.shape


def build_affinity(preds: Tensor, targets: Tensor,
                   bank: Optional[Union[NegativeBank, np.ndarray]] = None) -> AffinityMatrix:
    """Dot products of every predictor embedding with every target (and bank entry)."""
    preds, targets = _as_rows(preds), _as_rows(targets)
    if preds.shape[0] != targets.shape[0]:
        raise ContractError(f"build_affinity: {preds.shape[0]} predictions vs {targets.shape[0]} targets")
    if preds.shape[1] != targets.shape[1]:
        raise ContractError("build_affinity: embedding dimensions differ")
    _check_unit(preds, "predictor embeddings")
    _check_unit(targets, "target embeddings")
    values = ops.matmul(preds, ops.transpose(targets))
    num_negatives = 0
    if bank is not None:
        negatives = Tensor(_bank_rows(bank, preds.shape[1], preds.dtype))
        _check_unit(negatives, "bank entries")
        num_negatives = negatives.shape[0]
        values = ops.concat([values, ops.matmul(preds, ops.transpose(negatives))], axis=1)
    return AffinityMatrix(values=values, num_targets=targets.shape[0],
                          num_negatives=num_negatives, has_bank=bank is not None)


def multi_pair_loss(aff: AffinityMatrix, regime: str, tau: float = 0.2) -> Tensor:
    """Average the pair objective over every positive cell of the affinity.

    without_neg: mean of 2 - 2 a_ij over the (n/2)^2 positive cells.
    with_neg: mean over positive cells of InfoNCE, each cell sharing its row's
    bank columns as negatives.
    """
    q = aff.num_targets
    positives = ops.narrow(aff.values, 1, 0, q)
    if regime == WITHOUT_NEG:
        return ops.sub(2.0, ops.scale(ops.mean(positives), 2.0))
    if regime != WITH_NEG:
        raise ContractError(f"unknown regime '{regime}'")
    if not aff.has_bank:
        raise ContractError("with_neg regime needs bank columns in the affinity")
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    rows = aff.values.shape[0]
    negatives = ops.narrow(aff.values, 1, q, q + aff.num_negatives)
    cell_rows = np.repeat(np.arange(rows), q)
    cell_negatives = ops.take_rows(negatives, cell_rows)
    cell_positive = ops.reshape(positives, (rows * q, 1))
    logits = ops.scale(ops.concat([cell_positive, cell_negatives], axis=1), 1.0 / tau)
    log_prob = ops.narrow(ops.log_softmax(logits, axis=1), 1, 0, 1)
    return ops.neg(ops.mean(log_prob))


def embedding_std(embeddings: Union[Tensor, np.ndarray]) -> float:
    """Mean over dimensions of the per-dimension standard deviation across samples."""
    data = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    return float(np.mean(np.std(np.asarray(data, dtype=np.float64), axis=0)))
