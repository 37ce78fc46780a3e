"""
Synthetic videos with exact ground truth.

Textured squares and disks move over a static textured background. Each
object follows a translation (bouncing off the canvas walls), with optional
rotation and scaling. Ground truth per frame: label masks, bounding boxes and
an integer correspondence field mapping every pixel to its source pixel in
frame 0.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from skimage.filters import gaussian

from .errors import ContractError, SpecError
from .seeding import make_rng

SHAPES = ("square", "disk")


@dataclass
class ObjectSpec:
    """Explicit trajectory of one object; centres are (x, y) in pixels."""

    shape: str = "square"
    size: int = 12
    start: Tuple[float, float] = (16.0, 16.0)
    velocity: Tuple[float, float] = (0.0, 0.0)
    angular_velocity: float = 0.0
    scale_rate: float = 0.0


@dataclass
class GenSpec:
    """Canvas, object count, motion model and texture settings."""

    height: int = 48
    width: int = 48
    num_frames: int = 40
    num_objects: int = 2
    object_size: Tuple[int, int] = (10, 16)
    max_speed: float = 2.0
    max_angular_velocity: float = 0.0
    max_scale_rate: float = 0.0
    shapes: Tuple[str, ...] = SHAPES
    background_contrast: float = 0.15
    illumination_drift: float = 0.0
    allow_overlap: bool = False
    max_attempts: int = 100
    objects: Optional[List[ObjectSpec]] = None

    @classmethod
    def from_dict(cls, values: dict) -> "GenSpec":
        values = dict(values)
        objects = values.pop("objects", None)
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown generator keys: {sorted(unknown)}")
        for key in ("object_size", "shapes"):
            if key in values:
                values[key] = tuple(values[key])
        spec = cls(**values)
        if objects is not None:
            spec.objects = [ObjectSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                            for o in objects]
            spec.num_objects = len(spec.objects)
        return spec


@dataclass
class VideoClip:
    """Frames plus ground truth; `gt_flow[t, y, x]` is the (y, x) source pixel in frame 0."""

    frames: np.ndarray
    gt_masks: np.ndarray
    gt_boxes: np.ndarray
    gt_flow: np.ndarray
    num_objects: int
    video_id: int = 0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


def _reflect(value: float, lo: float, hi: float) -> float:
    """Fold `value` into [lo, hi] as if bouncing between the walls."""
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    offset = (value - lo) % period
    if offset > hi - lo:
        offset = period - offset
    return lo + offset


def _scale_at(rate: float, t: int) -> float:
    return float(np.clip(1.0 + rate * t, 0.5, 1.5))


class _Trajectory:
    """Per-object motion, shape and texture."""

    def __init__(self, obj: ObjectSpec, spec: GenSpec, rng: np.random.Generator):
        if obj.shape not in SHAPES:
            raise SpecError(f"unknown object shape '{obj.shape}'")
        if obj.size < 2:
            raise SpecError(f"object size must be at least 2 pixels, got {obj.size}")
        self.obj = obj
        rotates = obj.angular_velocity != 0.0 or obj.scale_rate != 0.0
        max_scale = 1.5 if obj.scale_rate else 1.0
        half = obj.size / 2.0
        radius = half * (math.sqrt(2.0) if obj.shape == "square" and rotates else 1.0) * max_scale
        self.rigid = not rotates
        self.margin = int(math.ceil(radius)) + (1 if rotates else 0)
        if 2 * self.margin > min(spec.height, spec.width):
            raise SpecError(
                f"object of size {obj.size} does not fit a {spec.height}x{spec.width} canvas")
        self.lo_x, self.hi_x = self.margin, spec.width - self.margin
        self.lo_y, self.hi_y = self.margin, spec.height - self.margin
        if obj.shape == "disk" or rotates:
            self.hi_x -= 1
            self.hi_y -= 1

        self.color = rng.uniform(0.15, 0.95, size=3)
        self.amplitude = rng.uniform(0.15, 0.3)
        angle = rng.uniform(0, math.pi)
        freq = rng.uniform(0.12, 0.3)
        self.wave = freq * np.array([math.cos(angle), math.sin(angle)])
        self.phase = rng.uniform(0, 2 * math.pi, size=3)

    def pose(self, t: int) -> Tuple[float, float, float, float]:
        """Centre x, centre y, angle, scale at frame t."""
        x = _reflect(self.obj.start[0] + self.obj.velocity[0] * t, self.lo_x, self.hi_x)
        y = _reflect(self.obj.start[1] + self.obj.velocity[1] * t, self.lo_y, self.hi_y)
        if self.rigid:
            x, y = float(round(x)), float(round(y))
        return x, y, self.obj.angular_velocity * t, _scale_at(self.obj.scale_rate, t)

    def local_coords(self, t: int, ys: np.ndarray, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cx, cy, angle, scale = self.pose(t)
        dx, dy = xs - cx, ys - cy
        cos, sin = math.cos(angle), math.sin(angle)
        ux = (cos * dx + sin * dy) / scale
        uy = (-sin * dx + cos * dy) / scale
        return ux, uy

    def inside(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        half = self.obj.size / 2.0
        if self.obj.shape == "square":
            return (ux >= -half) & (ux < half) & (uy >= -half) & (uy < half)
        return ux * ux + uy * uy <= half * half

    def texture(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        arg = self.wave[0] * ux + self.wave[1] * uy
        channels = [self.color[c] + self.amplitude * np.sin(2 * math.pi * arg + self.phase[c]) for c in range(3)]
        return np.clip(np.stack(channels, axis=-1), 0.0, 1.0)

    def to_frame0(self, ux: np.ndarray, uy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cx, cy, angle, scale = self.pose(0)
        cos, sin = math.cos(angle), math.sin(angle)
        x = cx + scale * (cos * ux - sin * uy)
        y = cy + scale * (sin * ux + cos * uy)
        return y, x


def _random_objects(spec: GenSpec, rng: np.random.Generator) -> List[ObjectSpec]:
    objects = []
    for _ in range(spec.num_objects):
        size = int(rng.integers(spec.object_size[0], spec.object_size[1] + 1))
        margin = size
        start = (float(rng.uniform(margin / 2, spec.width - margin / 2)),
                 float(rng.uniform(margin / 2, spec.height - margin / 2)))
        speed = rng.uniform(0.5, spec.max_speed) if spec.max_speed > 0 else 0.0
        heading = rng.uniform(0, 2 * math.pi)
        objects.append(ObjectSpec(
            shape=str(rng.choice(spec.shapes)),
            size=size,
            start=start,
            velocity=(float(speed * math.cos(heading)), float(speed * math.sin(heading))),
            angular_velocity=float(rng.uniform(-1, 1) * spec.max_angular_velocity),
            scale_rate=float(rng.uniform(-1, 1) * spec.max_scale_rate),
        ))
    return objects


def _background(spec: GenSpec, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.3, 0.7, size=3)
    noise = rng.standard_normal((spec.height, spec.width, 3))
    smooth = gaussian(noise, sigma=2.0, channel_axis=-1)
    smooth = smooth / (np.abs(smooth).max() + 1e-8)
    return np.clip(base + spec.background_contrast * smooth, 0.0, 1.0)


def _render(spec: GenSpec, trajectories: List[_Trajectory], background: np.ndarray) -> VideoClip:
    h, w, n_frames = spec.height, spec.width, spec.num_frames
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    identity = np.stack([ys, xs], axis=-1).astype(np.int32)

    frames = np.empty((n_frames, h, w, 3), dtype=np.float32)
    masks = np.zeros((n_frames, h, w), dtype=np.int32)
    flow = np.empty((n_frames, h, w, 2), dtype=np.int32)
    boxes = np.zeros((n_frames, len(trajectories), 4), dtype=np.float64)

    for t in range(n_frames):
        image = background.copy()
        mask = np.zeros((h, w), dtype=np.int32)
        flow_t = identity.copy()
        for label, traj in enumerate(trajectories, start=1):
            ux, uy = traj.local_coords(t, ys, xs)
            inside = traj.inside(ux, uy)
            if not spec.allow_overlap and np.any(inside & (mask > 0)):
                raise _Overlap()
            if not np.any(inside):
                raise SpecError(f"object {label} left the canvas at frame {t}")
            image[inside] = traj.texture(ux[inside], uy[inside])
            mask[inside] = label
            sy, sx = traj.to_frame0(ux[inside], uy[inside])
            flow_t[inside, 0] = np.clip(np.rint(sy), 0, h - 1).astype(np.int32)
            flow_t[inside, 1] = np.clip(np.rint(sx), 0, w - 1).astype(np.int32)
            rows, cols = np.nonzero(inside)
            boxes[t, label - 1] = (cols.min(), rows.min(), cols.max() - cols.min() + 1, rows.max() - rows.min() + 1)
        gain = 1.0 + spec.illumination_drift * t
        frames[t] = np.clip(image * gain, 0.0, 1.0)
        masks[t] = mask
        flow[t] = flow_t

    return VideoClip(frames=frames, gt_masks=masks, gt_boxes=boxes, gt_flow=flow,
                     num_objects=len(trajectories))


class _Overlap(Exception):
    pass


def gen_synthetic_clip(gen_spec: GenSpec, seed: int, video_id: int = 0) -> VideoClip:
    """Render one clip deterministically from `seed`.

    Random trajectories are redrawn until the objects stay disjoint in every
    frame (unless overlap is allowed); explicit trajectories that overlap are
    a SpecError.
    """
    if gen_spec.num_frames < 1 or gen_spec.height < 2 or gen_spec.width < 2:
        raise SpecError("canvas and clip length must be positive")
    if gen_spec.objects is None and gen_spec.num_objects < 0:
        raise SpecError("object count must be non-negative")
    lo, hi = gen_spec.object_size
    if gen_spec.objects is None and (lo < 2 or lo > hi):
        raise SpecError(f"invalid object size range {gen_spec.object_size}")

    rng = make_rng(seed, "clip", video_id)
    background = _background(gen_spec, rng)
    attempts = 1 if gen_spec.objects is not None else max(1, gen_spec.max_attempts)
    for _ in range(attempts):
        objects = gen_spec.objects if gen_spec.objects is not None else _random_objects(gen_spec, rng)
        trajectories = [_Trajectory(obj, gen_spec, rng) for obj in objects]
        try:
            clip = _render(gen_spec, trajectories, background)
        except _Overlap:
            continue
        clip.video_id = video_id
        clip.seed = seed
        clip.metadata = {"objects": [vars(o).copy() for o in objects]}
        return clip
    if gen_spec.objects is not None:
        raise SpecError("declared object trajectories overlap")
    raise SpecError(f"could not place {gen_spec.num_objects} disjoint objects in {attempts} attempts")


def check_clip(clip: VideoClip) -> None:
    """Raise ContractError when a clip violates the VideoClip invariants."""
    t, h, w = clip.frames.shape[:3]
    if clip.gt_masks.shape != (t, h, w):
        raise ContractError(f"mask shape {clip.gt_masks.shape} does not match frames {clip.frames.shape}")
    if clip.gt_masks.min() < 0 or clip.gt_masks.max() > clip.num_objects:
        raise ContractError("mask labels outside 0..num_objects")
    if clip.gt_flow.shape != (t, h, w, 2):
        raise ContractError(f"flow shape {clip.gt_flow.shape} does not match frames")
    fg = clip.gt_masks > 0
    fy, fx = clip.gt_flow[..., 0][fg], clip.gt_flow[..., 1][fg]
    if fy.size and (fy.min() < 0 or fy.max() >= h or fx.min() < 0 or fx.max() >= w):
        raise ContractError("flow points outside frame 0")
