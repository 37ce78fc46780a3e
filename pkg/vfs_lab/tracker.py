"""
Fully convolutional siamese tracking on frozen features.

The exemplar is cropped once from frame 0 around the initial box with context
padding. In every later frame search regions at a few scales are cropped
around the previous position, both crops are turned into feature maps, and
the exemplar map is slid over each search map. The peak of the upsampled,
cosine-windowed response gives the displacement; the best scale updates the
box size with damping.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ContractError
from .log import get_logger

logger = get_logger("tracker")

FeatureFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class TrackerConfig:
    exemplar_size: int = 16
    search_size: int = 32
    context: float = 0.5
    window_influence: float = 0.3
    scales: Tuple[float, ...] = (0.96, 1.0, 1.04)
    scale_penalty: float = 0.97
    scale_lr: float = 0.59
    response_upsample: int = 4
    normalized: bool = True

    @classmethod
    def from_settings(cls, settings) -> "TrackerConfig":
        return cls(exemplar_size=settings.exemplar_size, search_size=settings.search_size,
                   context=settings.context, window_influence=settings.window_influence,
                   scales=tuple(settings.scales), scale_penalty=settings.scale_penalty,
                   scale_lr=settings.scale_lr, response_upsample=settings.response_upsample,
                   normalized=settings.normalized)


@dataclass
class TrackState:
    """Exemplar features, current box as centre (x, y) and size (w, h), last response."""

    exemplar: np.ndarray
    center: np.ndarray
    size: np.ndarray
    frame_shape: Tuple[int, int]
    response: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def box(self) -> np.ndarray:
        """(x, y, w, h) with (x, y) the top-left corner."""
        return np.concatenate([self.center - self.size / 2.0, self.size])


def xcorr(exemplar: np.ndarray, search: np.ndarray, normalized: bool = True, eps: float = 1e-12) -> np.ndarray:
    """Valid cross-correlation of a (C, h, w) exemplar over a (C, H, W) search map.

    Returns:
        (H - h + 1, W - w + 1) response; with `normalized` each entry is the
        cosine similarity between the exemplar and the window under it
    """
    exemplar, search = np.asarray(exemplar, dtype=np.float64), np.asarray(search, dtype=np.float64)
    if exemplar.ndim != 3 or search.ndim != 3 or exemplar.shape[0] != search.shape[0]:
        raise ContractError(f"xcorr needs (C, h, w) maps with equal C, got {exemplar.shape} and {search.shape}")
    c, h, w = exemplar.shape
    if h > search.shape[1] or w > search.shape[2]:
        raise ContractError("exemplar is larger than the search region")
    windows = sliding_window_view(search, (h, w), axis=(1, 2))
    response = np.einsum("cijhw,chw->ij", windows, exemplar)
    if normalized:
        window_norms = np.sqrt(np.einsum("cijhw,cijhw->ij", windows, windows))
        response = response / np.maximum(window_norms * np.linalg.norm(exemplar), eps)
    return response


def crop_patch(frame: np.ndarray, center: Sequence[float], side: float, out_size: int) -> np.ndarray:
    """Square crop of `side` pixels around `center` (x, y), resampled to out_size.

    Regions outside the frame repeat the edge pixels.
    """
    offsets = (np.arange(out_size) + 0.5) * (side / out_size) - side / 2.0 - 0.5
    ys = center[1] + offsets
    xs = center[0] + offsets
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    channels = [ndimage.map_coordinates(frame[..., ch], [grid_y, grid_x], order=1, mode="nearest")
                for ch in range(frame.shape[2])]
    return np.stack(channels, axis=-1).astype(np.float32)


def _hann_window(size: int) -> np.ndarray:
    window = np.outer(np.hanning(size), np.hanning(size))
    return window / window.sum()


def _exemplar_side(size: np.ndarray, context: float) -> float:
    pad = context * float(size.sum())
    return float(np.sqrt((size[0] + pad) * (size[1] + pad)))


def penalized_peak(peak: float, scale: float, penalty: float) -> float:
    """Score of a response peak found at `scale`; off-unit scales lose (1 - penalty) of |peak|."""
    if scale == 1.0:
        return float(peak)
    return float(peak) - (1.0 - penalty) * abs(float(peak))


def init_tracker(frame: np.ndarray, box: Sequence[float], features: FeatureFn,
                 config: TrackerConfig) -> TrackState:
    """Crop and encode the exemplar for `box` (x, y, w, h) in the first frame."""
    box = np.asarray(box, dtype=np.float64)
    height, width = frame.shape[:2]
    if box.shape != (4,) or box[2] <= 0 or box[3] <= 0:
        raise ContractError(f"initial box must have positive width and height, got {box.tolist()}")
    if box[0] < 0 or box[1] < 0 or box[0] + box[2] > width or box[1] + box[3] > height:
        raise ContractError(f"initial box {box.tolist()} is not inside the {width}x{height} frame")
    size = box[2:].copy()
    center = box[:2] + size / 2.0
    patch = crop_patch(frame, center, _exemplar_side(size, config.context), config.exemplar_size)
    exemplar = features(patch[None])[0]
    return TrackState(exemplar=exemplar, center=center, size=size, frame_shape=(height, width))


def update_tracker(state: TrackState, frame: np.ndarray, features: FeatureFn,
                   config: TrackerConfig) -> TrackState:
    """Locate the target in `frame` and return the new state."""
    search_side = _exemplar_side(state.size, config.context) * config.search_size / config.exemplar_size
    patches = np.stack([crop_patch(frame, state.center, search_side * s, config.search_size)
                        for s in config.scales])
    maps = features(patches)
    stride = config.search_size / maps.shape[-1]

    responses = [xcorr(state.exemplar, maps[i], config.normalized) for i in range(len(config.scales))]
    best = int(np.argmax([penalized_peak(r.max(), s, config.scale_penalty)
                          for r, s in zip(responses, config.scales)]))
    response = responses[best]

    cells = response.shape[0]
    up = max(1, config.response_upsample)
    if cells > 1 and up > 1:
        size_up = (cells - 1) * up + 1
        response_up = ndimage.zoom(response, size_up / cells, order=1, grid_mode=False)
    else:
        size_up, response_up = cells, response
    response_up = response_up - response_up.min()
    total = response_up.sum()
    if total > 0:
        response_up = response_up / total
    response_up = (1 - config.window_influence) * response_up + config.window_influence * _hann_window(size_up)

    peak = np.array(np.unravel_index(np.argmax(response_up), response_up.shape), dtype=np.float64)
    centre_cell = (size_up - 1) / 2.0
    step_cells = (cells - 1) / (size_up - 1) if size_up > 1 else 1.0
    disp_crop = (peak - centre_cell) * step_cells * stride
    scale = config.scales[best]
    disp_frame = disp_crop * (search_side * scale / config.search_size)

    height, width = state.frame_shape
    new_size = state.size * ((1 - config.scale_lr) + config.scale_lr * scale)
    new_size = np.clip(new_size, 2.0, [width, height])
    new_center = state.center + disp_frame[::-1]
    new_center = np.clip(new_center, new_size / 2.0, np.array([width, height]) - new_size / 2.0)
    return TrackState(exemplar=state.exemplar, center=new_center, size=new_size,
                      frame_shape=state.frame_shape, response=response_up)


def track(frames: np.ndarray, init_box: Sequence[float], features: FeatureFn,
          config: TrackerConfig) -> np.ndarray:
    """Track one object through `frames` (T, H, W, 3).

    Args:
        frames: Clip frames
        init_box: (x, y, w, h) in frame 0
        features: Maps an (N, S, S, 3) patch batch to (N, C, s, s) feature maps
        config: Tracker settings

    Returns:
        (T, 4) boxes as (x, y, w, h); row 0 is the initial box
    """
    state = init_tracker(frames[0], init_box, features, config)
    boxes = [state.box()]
    for t in range(1, len(frames)):
        state = update_tracker(state, frames[t], features, config)
        boxes.append(state.box())
    return np.stack(boxes)


def identity_features(patches: np.ndarray) -> np.ndarray:
    """Raw pixels as (N, 3, s, s) feature maps."""
    return np.ascontiguousarray(np.asarray(patches, dtype=np.float64).transpose(0, 3, 1, 2))


def encoder_features(params, arch, block: int, stride_one_from: int) -> FeatureFn:
    """Feature function backed by a trained (or freshly initialised) encoder."""
    from .model import extract_block_maps

    def features(patches: np.ndarray) -> np.ndarray:
        return extract_block_maps(patches, params, arch, block, stride_one_from=stride_one_from)

    return features
