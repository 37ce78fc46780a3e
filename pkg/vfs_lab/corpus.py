"""
Seeded corpora of synthetic clips.

Training clips are kept as uint8 frames only; held-out clips keep their full
ground truth for evaluation. Clip `i` of a corpus is a pure function of
(data seed, video id), so corpora generated on any number of threads agree.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import List, Optional, Tuple

import numpy as np

from .clip_io import to_uint8
from .config import ConfigManager, DataConfig
from .log import get_logger
from .synthetic import GenSpec, VideoClip, gen_synthetic_clip

logger = get_logger("corpus")

HELD_OUT_OFFSET = 1_000_000


def gen_spec_from_config(data: DataConfig) -> GenSpec:
    return GenSpec(
        height=data.height,
        width=data.width,
        num_frames=data.num_frames,
        num_objects=data.num_objects,
        object_size=tuple(data.object_size),
        max_speed=data.max_speed,
        max_angular_velocity=data.max_angular_velocity,
        max_scale_rate=data.max_scale_rate,
        background_contrast=data.background_contrast,
        illumination_drift=data.illumination_drift,
    )


class SyntheticCorpus:
    """A fixed set of generated clips.

    Args:
        gen_spec: Generator settings shared by every clip
        seed: Data seed
        num_clips: Number of clips
        id_offset: First video id
        keep_ground_truth: Keep full VideoClip objects (held-out sets)
        workers: Generation threads
        callback: Optional RunCallback for progress
    """

    def __init__(self, gen_spec: GenSpec, seed: int, num_clips: int, id_offset: int = 0,
                 keep_ground_truth: bool = False, workers: int = 1, callback=None):
        self.gen_spec = gen_spec
        self.seed = int(seed)
        self.video_ids = list(range(id_offset, id_offset + num_clips))
        self.keep_ground_truth = keep_ground_truth
        self._frames: List[Optional[np.ndarray]] = [None] * num_clips
        self._clips: List[Optional[VideoClip]] = [None] * num_clips
        self._generate(max(1, workers), callback)

    def _generate(self, workers: int, callback) -> None:
        if callback:
            callback.on_phase_start("Generating clips", len(self.video_ids))
        done = 0
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(gen_synthetic_clip, self.gen_spec, self.seed, vid): index
                       for index, vid in enumerate(self.video_ids)}
            for future in as_completed(futures):
                index = futures[future]
                clip = future.result()
                self._frames[index] = to_uint8(clip.frames)
                if self.keep_ground_truth:
                    self._clips[index] = clip
                done += 1
                if callback:
                    callback.on_progress(done, len(self.video_ids), "clips")
        logger.debug(f"Generated {len(self.video_ids)} clips from data seed {self.seed}")

    def __len__(self) -> int:
        return len(self.video_ids)

    @property
    def num_frames(self) -> int:
        return self.gen_spec.num_frames

    def frames(self, index: int) -> np.ndarray:
        """uint8 frames (T, H, W, 3) of clip `index`."""
        return self._frames[index]

    def clip(self, index: int) -> VideoClip:
        if not self.keep_ground_truth:
            raise KeyError("ground truth was not kept for this corpus")
        return self._clips[index]

    def clips(self) -> List[VideoClip]:
        return [self.clip(i) for i in range(len(self))]


def build_corpora(data: DataConfig, callback=None) -> Tuple[SyntheticCorpus, SyntheticCorpus]:
    """Training corpus and held-out evaluation set for one data seed."""
    spec = gen_spec_from_config(data)
    workers = ConfigManager.get_optimal_workers(data.workers)
    train = SyntheticCorpus(spec, data.seed, data.train_clips, workers=workers, callback=callback)
    held_out = SyntheticCorpus(spec, data.seed, data.eval_clips, id_offset=HELD_OUT_OFFSET,
                               keep_ground_truth=True, workers=workers, callback=callback)
    return train, held_out
