"""
Training batch assembly.

A batch is a pure function of (seed, step): the epoch's clip order comes from
the stream (seed, "epoch", e) and each clip's frame indices and augmentations
from (seed, "sample", video_id, e). Worker threads build samples; a producer
thread hands finished batches to the training loop through a bounded queue.
"""

import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np

from .augment import AugmentSpec, augment
from .config import RunConfig
from .corpus import SyntheticCorpus
from .sampling import SamplerSpec, sample_indices, split_views
from .seeding import make_rng

_DONE = object()


@dataclass
class Batch:
    """Predictor-side and target-side frames, (B, n/2, S, S, 3) float32 each."""

    step: int
    video_ids: np.ndarray
    pred_frames: np.ndarray
    target_frames: np.ndarray

    @property
    def size(self) -> int:
        return int(self.pred_frames.shape[0])

    @property
    def views(self) -> int:
        return int(self.pred_frames.shape[1])


def sampler_spec_from_config(config: RunConfig, length: int) -> SamplerSpec:
    s = config.sampler
    return SamplerSpec(mode=s.mode, length=length, n=s.n_frames, delta=s.delta, start=s.start,
                       same_frame=not s.different_frame)


def augment_spec_from_config(config: RunConfig) -> AugmentSpec:
    a = config.augment
    return AugmentSpec(
        spatial_enabled=a.spatial,
        color_enabled=a.color,
        crop_scale=tuple(a.crop_scale),
        crop_ratio=tuple(a.crop_ratio),
        flip_prob=a.flip_prob,
        brightness=a.brightness,
        contrast=a.contrast,
        saturation=a.saturation,
        hue=a.hue,
        jitter_prob=a.jitter_prob,
        grayscale_prob=a.grayscale_prob,
        blur_sigma=tuple(a.blur_sigma),
        blur_prob=a.blur_prob,
    )


class BatchLoader:
    """Deterministic batch source over a training corpus.

    Args:
        corpus: Training clips
        config: Run configuration (sampler, augmentation, batch size, input size)
        seed: Run seed
        num_workers: Threads used to build the samples of one batch
        prefetch: Queue capacity in batches
    """

    def __init__(self, corpus: SyntheticCorpus, config: RunConfig, seed: int,
                 num_workers: int = 1, prefetch: int = 2):
        self.corpus = corpus
        self.seed = int(seed)
        self.batch_size = min(config.optim.batch_size, len(corpus))
        self.steps_per_epoch = max(1, len(corpus) // self.batch_size)
        self.sampler = sampler_spec_from_config(config, corpus.num_frames)
        self.augment = augment_spec_from_config(config)
        self.split = config.sampler.split
        self.out_size = (config.model.input_size, config.model.input_size)
        self.num_workers = max(1, num_workers)
        self.prefetch = max(1, prefetch)
        self.sampler.validate()
        self.augment.validate()

    def clips_for_step(self, step: int) -> Tuple[int, List[int]]:
        """(epoch, corpus indices) for `step`; no clip repeats within a batch."""
        epoch, position = divmod(step, self.steps_per_epoch)
        order = make_rng(self.seed, "epoch", epoch).permutation(len(self.corpus))
        chosen = order[position * self.batch_size:(position + 1) * self.batch_size]
        return epoch, [int(i) for i in chosen]

    def _sample(self, index: int, epoch: int) -> Tuple[np.ndarray, np.ndarray]:
        video_id = self.corpus.video_ids[index]
        rng = make_rng(self.seed, "sample", video_id, epoch)
        frames = self.corpus.frames(index)
        picked = sample_indices(self.sampler, rng)
        views = [augment(frames[t].astype(np.float32) / 255.0, self.augment, rng, self.out_size) for t in picked]
        pred, target = split_views(views, self.split)
        return np.stack(pred), np.stack(target)

    def batch_for_step(self, step: int, executor: ThreadPoolExecutor = None) -> Batch:
        epoch, indices = self.clips_for_step(step)
        if executor is None:
            samples = [self._sample(i, epoch) for i in indices]
        else:
            samples = list(executor.map(lambda i: self._sample(i, epoch), indices))
        return Batch(
            step=step,
            video_ids=np.asarray([self.corpus.video_ids[i] for i in indices], dtype=np.int64),
            pred_frames=np.stack([s[0] for s in samples]),
            target_frames=np.stack([s[1] for s in samples]),
        )

    def iterate(self, start_step: int, stop_step: int) -> Iterator[Batch]:
        """Yield batches for steps start_step..stop_step-1 in order."""
        handoff: "queue.Queue" = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce():
            try:
                with ThreadPoolExecutor(max_workers=self.num_workers) as executor:
                    for step in range(start_step, stop_step):
                        if stop.is_set():
                            return
                        batch = self.batch_for_step(step, executor)
                        while not stop.is_set():
                            try:
                                handoff.put(batch, timeout=0.1)
                                break
                            except queue.Full:
                                continue
            except BaseException as exc:  # handed to the consumer
                handoff.put(exc)
            finally:
                handoff.put(_DONE)

        producer = threading.Thread(target=produce, name="vfs-batch-producer", daemon=True)
        producer.start()
        try:
            while True:
                item = handoff.get()
                if item is _DONE:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            # Drain so a producer blocked on put() can exit.
            while producer.is_alive():
                try:
                    handoff.get(timeout=0.1)
                except queue.Empty:
                    pass
            producer.join()
