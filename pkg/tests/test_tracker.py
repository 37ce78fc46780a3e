"""
Tests for the cross-correlation tracker.
"""

import numpy as np
import pytest

from vfs_lab.errors import ContractError
from vfs_lab.model import ArchSpec, init_encoder_params
from vfs_lab.tracker import (TrackerConfig, crop_patch, encoder_features, identity_features, init_tracker, penalized_peak,
                             track, update_tracker, xcorr)

# 8 x 8 boxes with context 0.5 give a 16 px exemplar side: crops sample whole pixels.
EXACT = TrackerConfig(exemplar_size=16, search_size=32, context=0.5, window_influence=0.0,
                      scales=(1.0,), response_upsample=1)


def _texture(seed, size=64):
    return np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)


def test_recovers_translation():
    base = _texture(0)
    frames = np.stack([np.roll(base, shift=(t, 2 * t), axis=(0, 1)) for t in range(6)])
    boxes = track(frames, (20, 24, 8, 8), identity_features, EXACT)
    expected = np.array([[20 + 2 * t, 24 + t, 8, 8] for t in range(6)], dtype=np.float64)
    np.testing.assert_allclose(boxes, expected, atol=1e-9)


def test_zero_motion_keeps_box():
    frames = np.repeat(_texture(1)[None], 4, axis=0)
    config = TrackerConfig(exemplar_size=16, search_size=32, context=0.5, scales=(0.96, 1.0, 1.04))
    boxes = track(frames, (30, 18, 8, 8), identity_features, config)
    assert boxes.shape == (4, 4)
    np.testing.assert_allclose(boxes[:, :2] + boxes[:, 2:] / 2.0, np.tile([34.0, 22.0], (4, 1)), atol=1e-9)


def test_response_shape():
    frame = _texture(2)
    state = init_tracker(frame, (20, 20, 8, 8), identity_features, EXACT)
    assert state.exemplar.shape == (3, 16, 16)
    assert update_tracker(state, frame, identity_features, EXACT).response.shape == (17, 17)
    upsampled = TrackerConfig(exemplar_size=16, search_size=32, response_upsample=4)
    assert update_tracker(state, frame, identity_features, upsampled).response.shape == (65, 65)


def test_penalized_peak_lowers_off_scale_scores_of_either_sign():
    assert penalized_peak(0.8, 1.0, 0.97) == 0.8
    assert penalized_peak(-0.8, 1.0, 0.97) == -0.8
    assert penalized_peak(0.8, 1.04, 0.97) == pytest.approx(0.776)
    assert penalized_peak(-0.8, 0.96, 0.97) == pytest.approx(-0.824)
    assert penalized_peak(-0.8, 0.96, 0.97) < penalized_peak(-0.8, 1.0, 0.97)


def test_negative_responses_keep_unit_scale():
    def anti_features(patches):
        # the exemplar crop is the only single-patch call
        fill = 1.0 if len(patches) == 1 else -1.0
        return np.full((len(patches), 1, 4, 4), fill)

    config = TrackerConfig(exemplar_size=16, search_size=32, scales=(0.96, 1.0, 1.04), response_upsample=1)
    state = init_tracker(np.zeros((32, 32, 3), dtype=np.float32), (10, 10, 8, 8), anti_features, config)
    moved = update_tracker(state, np.zeros((32, 32, 3), dtype=np.float32), anti_features, config)
    np.testing.assert_allclose(moved.size, [8.0, 8.0])


def test_invalid_initial_boxes():
    frame = _texture(3, size=32)
    with pytest.raises(ContractError):
        init_tracker(frame, (4, 4, 0, 8), identity_features, EXACT)
    with pytest.raises(ContractError):
        init_tracker(frame, (28, 4, 8, 8), identity_features, EXACT)
    with pytest.raises(ContractError):
        init_tracker(frame, (-1, 4, 8, 8), identity_features, EXACT)


def test_xcorr():
    rng = np.random.default_rng(4)
    search = rng.standard_normal((3, 10, 10))
    exemplar = search[:, 2:6, 5:9].copy()
    response = xcorr(exemplar, search)
    assert response.shape == (7, 7)
    assert np.unravel_index(np.argmax(response), response.shape) == (2, 5)
    assert response[2, 5] == pytest.approx(1.0)
    assert np.all(response <= 1.0 + 1e-12)
    raw = xcorr(exemplar, search, normalized=False)
    assert raw[2, 5] == pytest.approx(np.sum(exemplar ** 2))
    with pytest.raises(ContractError):
        xcorr(search, exemplar)


def test_crop_patch_is_pixel_exact_at_unit_scale():
    frame = _texture(5, size=24)
    patch = crop_patch(frame, (10, 12), 8, 8)
    np.testing.assert_array_equal(patch, frame[8:16, 6:14])
    edge = crop_patch(frame, (0, 0), 8, 8)
    np.testing.assert_array_equal(edge[0, 0], frame[0, 0])


def test_encoder_features_shape():
    arch = ArchSpec(input_size=16, channels=(4, 8), strides=(2, 2), intermediate_block=1, final_block=2)
    params = init_encoder_params(arch, np.random.default_rng(6))
    features = encoder_features(params, arch, block=2, stride_one_from=2)
    maps = features(np.stack([_texture(7, size=32)] * 2))
    assert maps.shape == (2, 8, 16, 16)
