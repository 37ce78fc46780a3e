"""
Spatial and colour augmentation of single frames.

Spatial: random resized crop + horizontal flip. Colour: brightness, contrast,
saturation and hue jitter in random order, random grayscale, gaussian blur.
Frames are H x W x 3 float arrays in [0, 1].
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from skimage.color import hsv2rgb, rgb2gray, rgb2hsv
from skimage.filters import gaussian
from skimage.transform import resize

from .errors import ContractError


@dataclass
class AugmentSpec:
    """Switches and ranges for both augmentation families."""

    spatial_enabled: bool = True
    color_enabled: bool = True
    crop_scale: Tuple[float, float] = (0.2, 1.0)
    crop_ratio: Tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    blur_prob: float = 0.5

    def validate(self) -> None:
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {value}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ContractError(f"crop_scale must be a sub-range of (0, 1], got {self.crop_scale}")
        if self.crop_ratio[0] <= 0 or self.crop_ratio[0] > self.crop_ratio[1]:
            raise ContractError(f"invalid crop_ratio {self.crop_ratio}")
        if min(self.brightness, self.contrast, self.saturation) < 0 or not 0 <= self.hue <= 0.5:
            raise ContractError("jitter magnitudes must be non-negative and hue <= 0.5")
        if self.blur_sigma[0] < 0 or self.blur_sigma[0] > self.blur_sigma[1]:
            raise ContractError(f"invalid blur_sigma range {self.blur_sigma}")


def hflip(frame: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frame[:, ::-1])


def resize_frame(frame: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize to (height, width); identity when the size already matches."""
    size = (int(size[0]), int(size[1]))
    if frame.shape[:2] == size:
        return frame
    return resize(frame, size + frame.shape[2:], order=1, mode="edge",
                  anti_aliasing=False, preserve_range=True).astype(frame.dtype)


def random_crop_box(height: int, width: int, scale: Tuple[float, float], ratio: Tuple[float, float],
                    rng: np.random.Generator) -> Tuple[int, int, int, int]:
    """Crop box (top, left, h, w) of random area fraction and aspect ratio.

    Ten attempts, then a centre crop with the ratio clamped to the range.
    """
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w

    in_ratio = width / height
    if in_ratio < ratio[0]:
        w, h = width, int(round(width / ratio[0]))
    elif in_ratio > ratio[1]:
        h, w = height, int(round(height * ratio[1]))
    else:
        w, h = width, height
    return (height - h) // 2, (width - w) // 2, h, w


def _gray(frame: np.ndarray) -> np.ndarray:
    return rgb2gray(frame)[..., None]


def _adjust_brightness(frame, factor):
    return frame * factor


def _adjust_contrast(frame, factor):
    return frame * factor + _gray(frame).mean() * (1.0 - factor)


def _adjust_saturation(frame, factor):
    return frame * factor + _gray(frame) * (1.0 - factor)


def _adjust_hue(frame, shift):
    hsv = rgb2hsv(np.clip(frame, 0.0, 1.0))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return hsv2rgb(hsv)


def color_jitter(frame: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation and hue jitter in random order."""
    factors = {
        "brightness": rng.uniform(max(0.0, 1 - spec.brightness), 1 + spec.brightness),
        "contrast": rng.uniform(max(0.0, 1 - spec.contrast), 1 + spec.contrast),
        "saturation": rng.uniform(max(0.0, 1 - spec.saturation), 1 + spec.saturation),
        "hue": rng.uniform(-spec.hue, spec.hue),
    }
    ops = {
        "brightness": _adjust_brightness,
        "contrast": _adjust_contrast,
        "saturation": _adjust_saturation,
        "hue": _adjust_hue,
    }
    order = ["brightness", "contrast", "saturation", "hue"]
    for idx in rng.permutation(len(order)):
        name = order[idx]
        neutral = 0.0 if name == "hue" else 1.0
        if factors[name] == neutral:
            continue
        frame = np.clip(ops[name](frame, factors[name]), 0.0, 1.0)
    return frame


def augment(frame: np.ndarray, spec: AugmentSpec, rng: np.random.Generator,
            out_size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Apply the enabled augmentation families to one frame.

    Args:
        frame: H x W x 3 raster in [0, 1]
        spec: Augmentation switches and ranges
        rng: Generator owning every random draw
        out_size: Output (height, width); defaults to the input size

    Returns:
        Augmented raster clamped to [0, 1], float32
    """
    spec.validate()
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ContractError(f"expected an H x W x 3 frame, got {frame.shape}")
    height, width = frame.shape[:2]
    out_size = tuple(out_size) if out_size is not None else (height, width)
    out = frame

    if spec.spatial_enabled:
        top, left, h, w = random_crop_box(height, width, spec.crop_scale, spec.crop_ratio, rng)
        out = resize_frame(out[top:top + h, left:left + w], out_size)
        if rng.random() < spec.flip_prob:
            out = hflip(out)
    else:
        out = resize_frame(out, out_size)

    if spec.color_enabled:
        if rng.random() < spec.jitter_prob:
            out = color_jitter(out, spec, rng)
        if rng.random() < spec.grayscale_prob:
            out = np.repeat(_gray(out), 3, axis=2)
        if rng.random() < spec.blur_prob:
            sigma = rng.uniform(*spec.blur_sigma)
            out = gaussian(out, sigma=sigma, channel_axis=-1, preserve_range=True)

    return np.clip(out, 0.0, 1.0).astype(np.float32)
