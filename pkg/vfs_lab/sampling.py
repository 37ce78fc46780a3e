"""
Temporal frame sampling.

Continuous sampling takes n frames at a fixed interval from a start index;
distant sampling splits the clip into n equal segments and draws one frame
uniformly from each. Indices are 0-based.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .errors import ContractError, RangeError

CONTINUOUS = "continuous"
DISTANT = "distant"

T = TypeVar("T")


@dataclass
class SamplerSpec:
    """How to pick n frame indices from a clip of L frames."""

    mode: str = DISTANT
    length: int = 40
    n: int = 2
    delta: int = 0
    start: Optional[int] = None
    same_frame: bool = False

    def validate(self) -> None:
        if self.mode not in (CONTINUOUS, DISTANT):
            raise ContractError(f"unknown sampling mode '{self.mode}'")
        if self.n < 1:
            raise RangeError(f"need at least one frame, got n={self.n}")
        if self.length < 1:
            raise RangeError(f"clip length must be positive, got L={self.length}")
        if self.delta < 0:
            raise RangeError(f"frame interval must be non-negative, got {self.delta}")


def segment_bounds(length: int, n: int) -> List[Tuple[int, int]]:
    """Half-open segments [floor(L*i/n), floor(L*(i+1)/n)) for i = 0..n-1."""
    if n < 1 or n > length:
        raise RangeError(f"cannot split {length} frames into {n} segments")
    return [(length * i // n, length * (i + 1) // n) for i in range(n)]


def sample_continuous(spec: SamplerSpec, rng: np.random.Generator) -> List[int]:
    """Indices start + i*delta for i = 0..n-1.

    When `spec.start` is None the start is drawn uniformly over every valid value.
    """
    spec.validate()
    span = (spec.n - 1) * spec.delta
    if spec.start is None:
        if span > spec.length - 1:
            raise RangeError(
                f"{spec.n} frames at interval {spec.delta} need {span + 1} frames, clip has {spec.length}")
        start = int(rng.integers(0, spec.length - span))
    else:
        start = int(spec.start)
        if start < 0 or start + span > spec.length - 1:
            raise RangeError(
                f"start {start} + {spec.n - 1}*{spec.delta} exceeds last index {spec.length - 1}")
    return [start + i * spec.delta for i in range(spec.n)]


def sample_distant(spec: SamplerSpec, rng: np.random.Generator) -> List[int]:
    """One index drawn uniformly from each of n disjoint segments."""
    spec.validate()
    if spec.n > spec.length:
        raise RangeError(f"cannot draw {spec.n} distant frames from {spec.length}")
    return [int(rng.integers(lo, hi)) for lo, hi in segment_bounds(spec.length, spec.n)]


def sample_indices(spec: SamplerSpec, rng: np.random.Generator) -> List[int]:
    """Dispatch on the sampling mode and apply the same-frame switch."""
    if spec.mode == CONTINUOUS:
        indices = sample_continuous(spec, rng)
    else:
        indices = sample_distant(spec, rng)
    if spec.same_frame:
        indices = [indices[0]] * len(indices)
    return indices


def split_views(items: Sequence[T], mode: str = "first_half") -> Tuple[List[T], List[T]]:
    """Assign sampled frames to the predictor and target sides.

    Args:
        items: n sampled frames (or indices), n even
        mode: "first_half" (first n/2 to the predictor) or "interleaved"

    Returns:
        Tuple of (predictor items, target items)
    """
    items = list(items)
    if len(items) < 2 or len(items) % 2:
        raise ContractError(f"need an even number of frames (>= 2), got {len(items)}")
    if mode == "first_half":
        half = len(items) // 2
        return items[:half], items[half:]
    if mode == "interleaved":
        return items[0::2], items[1::2]
    raise ContractError(f"unknown view split '{mode}'")
