"""
Tests for deterministic batch assembly.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from conftest import tiny_config
from vfs_lab.corpus import build_corpora
from vfs_lab.loader import BatchLoader


def test_batch_shapes(config, corpora):
    train, _ = corpora
    batch = BatchLoader(train, config, seed=1).batch_for_step(0)
    assert batch.pred_frames.shape == (2, 1, 16, 16, 3)
    assert batch.target_frames.shape == (2, 1, 16, 16, 3)
    assert batch.pred_frames.dtype == np.float32
    assert batch.size == 2 and batch.views == 1
    assert 0.0 <= batch.pred_frames.min() and batch.pred_frames.max() <= 1.0


def test_multi_frame_batches_split_views():
    config = tiny_config({"sampler.n_frames": 4})
    train, _ = build_corpora(config.data)
    batch = BatchLoader(train, config, seed=1).batch_for_step(1)
    assert batch.pred_frames.shape == (2, 2, 16, 16, 3)
    assert batch.views == 2


def test_batches_are_a_function_of_seed_and_step(config, corpora):
    train, _ = corpora
    a = BatchLoader(train, config, seed=5).batch_for_step(3)
    b = BatchLoader(train, config, seed=5, num_workers=3).batch_for_step(3)
    assert a.pred_frames.tobytes() == b.pred_frames.tobytes()
    assert a.target_frames.tobytes() == b.target_frames.tobytes()
    assert list(a.video_ids) == list(b.video_ids)
    other = BatchLoader(train, config, seed=6).batch_for_step(3)
    assert other.pred_frames.tobytes() != a.pred_frames.tobytes()


def test_epoch_visits_every_clip_once(config, corpora):
    train, _ = corpora
    loader = BatchLoader(train, config, seed=2)
    for epoch in range(3):
        seen = []
        for position in range(loader.steps_per_epoch):
            step_epoch, indices = loader.clips_for_step(epoch * loader.steps_per_epoch + position)
            assert step_epoch == epoch
            assert len(set(indices)) == len(indices)
            seen.extend(indices)
        assert sorted(seen) == list(range(len(train)))


def test_iterate_matches_direct_batches(config, corpora):
    train, _ = corpora
    loader = BatchLoader(train, config, seed=3, num_workers=2, prefetch=1)
    batches = list(loader.iterate(1, 4))
    assert [b.step for b in batches] == [1, 2, 3]
    with ThreadPoolExecutor(max_workers=2) as executor:
        direct = loader.batch_for_step(2, executor)
    assert batches[1].pred_frames.tobytes() == direct.pred_frames.tobytes()


def test_iterate_can_stop_early(config, corpora):
    train, _ = corpora
    loader = BatchLoader(train, config, seed=4, prefetch=1)
    for batch in loader.iterate(0, 50):
        if batch.step == 2:
            break
    assert list(loader.iterate(5, 5)) == []
