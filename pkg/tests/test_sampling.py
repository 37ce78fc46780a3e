#!/usr/bin/env python3
"""
Tests for continuous and distant frame sampling.
"""

import numpy as np
import pytest
from scipy import stats

from vfs_lab.errors import ContractError, RangeError
from vfs_lab.sampling import (SamplerSpec, sample_continuous, sample_distant, sample_indices, segment_bounds,
                              split_views)
from vfs_lab.seeding import make_rng, stream_seed


def test_continuous_examples():
    rng = make_rng(0, "test")
    assert sample_continuous(SamplerSpec("continuous", length=30, n=3, delta=8, start=10), rng) == [10, 18, 26]
    twins = sample_continuous(SamplerSpec("continuous", length=30, n=2, delta=0), rng)
    assert twins[0] == twins[1]
    with pytest.raises(RangeError):
        sample_continuous(SamplerSpec("continuous", length=10, n=2, delta=4, start=8), rng)


def test_continuous_random_start_covers_valid_range():
    rng = make_rng(1, "test")
    spec = SamplerSpec("continuous", length=20, n=3, delta=4)
    starts = set()
    for _ in range(2000):
        indices = sample_continuous(spec, rng)
        assert np.all(np.diff(indices) == 4)
        assert indices[-1] <= 19
        starts.add(indices[0])
    assert starts == set(range(0, 20 - 8))
    with pytest.raises(RangeError):
        sample_continuous(SamplerSpec("continuous", length=8, n=3, delta=4), rng)


def test_segment_bounds_partition_the_clip():
    bounds = segment_bounds(31, 4)
    assert bounds[0][0] == 0 and bounds[-1][1] == 31
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
    assert segment_bounds(300, 2) == [(0, 150), (150, 300)]


def test_distant_examples():
    rng = make_rng(2, "test")
    for _ in range(200):
        first, second = sample_distant(SamplerSpec("distant", length=300, n=2), rng)
        assert 0 <= first < 150 <= second < 300
    assert sample_distant(SamplerSpec("distant", length=5, n=5), rng) == [0, 1, 2, 3, 4]
    with pytest.raises(RangeError):
        sample_distant(SamplerSpec("distant", length=3, n=4), rng)


def test_distant_gap_and_uniformity():
    """Mean gap is L/n and each segment is sampled uniformly."""
    length, n, draws = 40, 4, 10_000
    rng = make_rng(3, "test")
    samples = np.array([sample_distant(SamplerSpec("distant", length=length, n=n), rng) for _ in range(draws)])
    mean_gap = np.diff(samples, axis=1).mean()
    assert abs(mean_gap - length / n) <= 0.05 * length / n
    offsets = []
    for i, (lo, hi) in enumerate(segment_bounds(length, n)):
        column = samples[:, i]
        assert column.min() >= lo and column.max() < hi
        offsets.append(np.bincount(column - lo, minlength=hi - lo))
    # Segments are equally long here, so one table covers every segment.
    assert stats.chisquare(np.concatenate(offsets)).pvalue > 0.01


def test_same_frame_switch():
    rng = make_rng(4, "test")
    indices = sample_indices(SamplerSpec("distant", length=40, n=4, same_frame=True), rng)
    assert len(set(indices)) == 1


def test_bad_specs():
    rng = make_rng(5, "test")
    with pytest.raises(ContractError):
        sample_indices(SamplerSpec("random", length=10, n=2), rng)
    with pytest.raises(RangeError):
        sample_indices(SamplerSpec("continuous", length=10, n=2, delta=-1), rng)


def test_split_views():
    assert split_views([0, 1, 2, 3]) == ([0, 1], [2, 3])
    assert split_views([0, 1, 2, 3], "interleaved") == ([0, 2], [1, 3])
    with pytest.raises(ContractError):
        split_views([0, 1, 2])


def test_named_streams_are_independent_of_order():
    assert stream_seed(7, "sample", 3, 0) == stream_seed(7, "sample", 3, 0)
    assert stream_seed(7, "sample", 3, 0) != stream_seed(7, "sample", 3, 1)
    a = make_rng(7, "epoch", 0).integers(0, 1000, size=5)
    make_rng(7, "other").integers(0, 1000, size=50)
    b = make_rng(7, "epoch", 0).integers(0, 1000, size=5)
    np.testing.assert_array_equal(a, b)
