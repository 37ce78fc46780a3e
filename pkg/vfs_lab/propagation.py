"""
Recurrent label propagation over per-frame feature maps.

Every query location gathers affinities to reference locations within a
Chebyshev radius, keeps the top-k candidates (pooled over all references, or
per reference), and takes the temperature softmax of those affinities as
weights over the candidates' label distributions. Frame t is propagated from
frame 0's labels plus the predictions of the m preceding frames.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage.measure import block_reduce
from skimage.transform import resize

from .errors import ContractError
from .log import get_logger

logger = get_logger("propagation")

GLOBAL = "global"
PER_REFERENCE = "per_reference"


@dataclass
class PropagationConfig:
    topk: int = 10
    m_frames: int = 20
    radius: int = 12
    temperature: float = 0.07
    topk_scope: str = GLOBAL

    def validate(self) -> None:
        if self.topk < 1 or self.m_frames < 0 or self.radius < 0:
            raise ContractError("propagation needs topk >= 1, m_frames >= 0 and radius >= 0")
        if self.temperature <= 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.topk_scope not in (GLOBAL, PER_REFERENCE):
            raise ContractError(f"unknown top-k scope '{self.topk_scope}'")


@dataclass
class LabelMap:
    """Per-pixel class distribution, shape (H, W, C); class 0 is background."""

    probs: np.ndarray

    @classmethod
    def from_mask(cls, mask: np.ndarray, num_classes: int) -> "LabelMap":
        mask = np.asarray(mask)
        if mask.min() < 0 or mask.max() >= num_classes:
            raise ContractError(f"mask labels must lie in 0..{num_classes - 1}")
        return cls(np.eye(num_classes, dtype=np.float64)[mask])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[-1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probs.shape[:2]

    def hard(self) -> np.ndarray:
        """Argmax label per pixel."""
        return np.argmax(self.probs, axis=-1).astype(np.int32)


@dataclass
class AffinityBlock:
    """Query x reference affinities (row-major locations); out-of-radius entries are -inf."""

    values: np.ndarray
    height: int
    width: int
    radius: int


def normalize_map(feature_map: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """L2-normalise a (C, h, w) map (or a stack of them) over channels at every location."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    norms = np.sqrt(np.sum(fmap * fmap, axis=-3, keepdims=True))
    return fmap / np.maximum(norms, eps)


def radius_mask(height: int, width: int, radius: int) -> np.ndarray:
    """(hw, hw) boolean mask of location pairs at Chebyshev distance <= radius."""
    ys, xs = np.divmod(np.arange(height * width), width)
    return np.maximum(np.abs(ys[:, None] - ys[None, :]), np.abs(xs[:, None] - xs[None, :])) <= radius


def local_affinity(query_map: np.ndarray, ref_map: np.ndarray, radius: int) -> AffinityBlock:
    """Dot products of every query location with every reference location in radius."""
    query_map, ref_map = np.asarray(query_map, dtype=np.float64), np.asarray(ref_map, dtype=np.float64)
    if query_map.ndim != 3 or query_map.shape != ref_map.shape:
        raise ContractError(f"feature maps must be congruent (C, h, w), got {query_map.shape} and {ref_map.shape}")
    if radius < 0:
        raise ContractError(f"radius must be non-negative, got {radius}")
    c, h, w = query_map.shape
    q = query_map.reshape(c, h * w).T
    r = ref_map.reshape(c, h * w)
    values = q @ r
    values[~radius_mask(h, w, radius)] = -np.inf
    return AffinityBlock(values=values, height=h, width=w, radius=radius)


def _select(scores: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest finite scores per row; ties go to the lower index."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def propagate_step(query_map: np.ndarray, refs: Sequence[Tuple[np.ndarray, LabelMap]],
                   config: PropagationConfig) -> LabelMap:
    """Label distribution for one query frame from reference (features, labels) pairs.

    A query location without any in-radius candidate gets pure background.
    """
    config.validate()
    if not refs:
        raise ContractError("propagate_step needs at least one reference")
    blocks, labels = [], []
    for ref_map, label_map in refs:
        block = local_affinity(query_map, ref_map, config.radius)
        if label_map.shape != (block.height, block.width):
            raise ContractError(f"label map {label_map.shape} does not match features {(block.height, block.width)}")
        blocks.append(block.values)
        labels.append(label_map.probs.reshape(-1, label_map.num_classes))
    num_classes = labels[0].shape[1]
    if any(lab.shape[1] != num_classes for lab in labels):
        raise ContractError("reference label maps disagree on the number of classes")

    scores = np.concatenate(blocks, axis=1)
    candidates = np.concatenate(labels, axis=0)
    if config.topk_scope == GLOBAL:
        chosen = _select(scores, config.topk)
    else:
        width = blocks[0].shape[1]
        chosen = np.concatenate([_select(block, config.topk) + i * width for i, block in enumerate(blocks)], axis=1)

    picked = np.take_along_axis(scores, chosen, axis=1)
    valid = np.isfinite(picked)
    top = np.where(valid, picked, -np.inf).max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    weights = np.where(valid, np.exp((np.where(valid, picked, 0.0) - top) / config.temperature), 0.0)
    totals = weights.sum(axis=1, keepdims=True)

    out = np.einsum("qk,qkc->qc", weights, candidates[chosen]) / np.where(totals > 0, totals, 1.0)
    empty = totals[:, 0] == 0
    if np.any(empty):
        out[empty] = 0.0
        out[empty, 0] = 1.0
    h, w = query_map.shape[1:]
    return LabelMap(out.reshape(h, w, num_classes))


def recurrent_inference(frame_maps: Sequence[np.ndarray], first_labels: LabelMap,
                        config: PropagationConfig) -> List[LabelMap]:
    """Propagate frame 0's labels through the clip.

    Frame t uses frame 0 (given labels) and the predictions for frames
    max(1, t - m) .. t - 1 as references.

    Returns:
        One LabelMap per frame; entry 0 is `first_labels`
    """
    config.validate()
    predictions = [first_labels]
    for t in range(1, len(frame_maps)):
        refs = [(frame_maps[0], first_labels)]
        refs += [(frame_maps[s], predictions[s]) for s in range(max(1, t - config.m_frames), t)]
        predictions.append(propagate_step(frame_maps[t], refs, config))
    return predictions


def effective_radius(radius: int, map_extent: int, reference_extent: int = 60, scale: bool = True) -> int:
    """Radius in feature cells, scaled from a reference map extent."""
    if not scale:
        return int(radius)
    return max(1, int(round(radius * map_extent / reference_extent)))


def downsample_labels(labels: LabelMap, size: Tuple[int, int]) -> LabelMap:
    """Block-average (or bilinear-resize) a label map to feature resolution."""
    h, w = labels.shape
    if (h, w) == tuple(size):
        return labels
    if h % size[0] == 0 and w % size[1] == 0:
        probs = block_reduce(labels.probs, (h // size[0], w // size[1], 1), np.mean)
    else:
        probs = resize(labels.probs, tuple(size) + (labels.num_classes,), order=1, anti_aliasing=True)
    probs = np.clip(probs, 0.0, None)
    return LabelMap(probs / probs.sum(axis=-1, keepdims=True))


def upsample_labels(labels: LabelMap, size: Tuple[int, int]) -> LabelMap:
    if labels.shape == tuple(size):
        return labels
    probs = resize(labels.probs, tuple(size) + (labels.num_classes,), order=1, mode="edge", anti_aliasing=False)
    return LabelMap(probs)


@dataclass
class PropagationResult:
    masks: np.ndarray
    label_maps: List[LabelMap]
    radius: int


def propagate_masks(frame_maps: np.ndarray, first_mask: np.ndarray, num_classes: int,
                    config: PropagationConfig, reference_extent: Optional[int] = 60) -> PropagationResult:
    """Full-resolution masks from (T, C, h, w) features and a frame-0 label mask.

    Args:
        frame_maps: Raw per-frame features; normalised here per location
        first_mask: (H, W) integer labels of frame 0
        num_classes: Background plus objects
        config: Propagation settings; `radius` is scaled by the map extent
            unless `reference_extent` is None
        reference_extent: Map extent the configured radius refers to
    """
    maps = normalize_map(frame_maps)
    h, w = maps.shape[2:]
    radius = effective_radius(config.radius, max(h, w), reference_extent or 1, reference_extent is not None)
    scaled = PropagationConfig(topk=config.topk, m_frames=config.m_frames, radius=radius,
                               temperature=config.temperature, topk_scope=config.topk_scope)
    first = downsample_labels(LabelMap.from_mask(first_mask, num_classes), (h, w))
    label_maps = recurrent_inference(list(maps), first, scaled)
    full = np.asarray(first_mask).shape
    masks = np.stack([np.asarray(first_mask, dtype=np.int32)] +
                     [upsample_labels(lm, full).hard() for lm in label_maps[1:]])
    logger.debug(f"Propagated {len(label_maps)} frames at {h}x{w}, radius {radius}")
    return PropagationResult(masks=masks, label_maps=label_maps, radius=radius)
