import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

import oracles
from otstereo.upsample import (apply_upsample, edge_guided_filter, upsample_weights,
                               warp_right, weighted_upsample)


def test_constant_quarter_map_scales_by_four(rng):
    out = weighted_upsample(np.full((5, 6), 2.0), rng.random((20, 24)))
    np.testing.assert_allclose(out, 8.0, atol=1e-12)


def test_uniform_guide_matches_distance_oracle(rng):
    q = rng.uniform(0, 10, (4, 5))
    out = weighted_upsample(q, np.full((16, 20), 0.3), sigma_space=0.5)
    np.testing.assert_allclose(out, oracles.upsample_uniform(q, (16, 20), 0.5), atol=1e-5)


def test_ceil_dims_accepted_and_mismatch_rejected(rng):
    assert weighted_upsample(np.ones((3, 3)), rng.random((10, 11))).shape == (10, 11)
    with pytest.raises(ValueError):
        weighted_upsample(np.ones((3, 3)), rng.random((16, 12)))


def test_step_edge_follows_guide():
    # quarter-res step between columns 4 and 5; guide edge at full-res column 20
    q = np.where(np.arange(10) < 5, 2.0, 6.0)[None].repeat(6, 0)
    guide = np.where(np.arange(40) < 20, 0.2, 0.8)[None].repeat(24, 0)
    out = weighted_upsample(q, guide)
    mid = 0.5 * (8.0 + 24.0)
    for row in out:
        edge = np.flatnonzero(row > mid)[0]
        assert abs(edge - 20) <= 1


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31 - 1))
def test_upsample_is_convex(seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-3, 7, (5, 4))
    out = weighted_upsample(q, rng.random((18, 14)))
    assert out.min() >= 4 * q.min() - 1e-9 and out.max() <= 4 * q.max() + 1e-9


def test_external_weights(rng):
    q = rng.random((3, 3))
    w = np.zeros((12, 12, 9))
    w[..., 4] = 1.0
    out = weighted_upsample(q, np.zeros((12, 12)), weights=w)
    np.testing.assert_allclose(out, 4 * np.kron(q, np.ones((4, 4))))
    with pytest.raises(ValueError):
        weighted_upsample(q, np.zeros((12, 12)), weights=np.ones((12, 12, 4)))


def test_weights_are_convex(rng):
    w = upsample_weights(rng.random((13, 9)), (4, 3))
    np.testing.assert_allclose(w.sum(axis=-1), 1.0)
    assert np.all(w >= 0)
    # corner pixels have no neighbors outside the map
    assert w[0, 0, 0] == 0 and w[-1, -1, 8] == 0
    np.testing.assert_allclose(apply_upsample(np.ones((4, 3)), w), 1.0)


def test_warp_identity_and_ramp(rng):
    right = rng.random((6, 10)).astype(np.float32)
    out, valid = warp_right(right, np.zeros((6, 10)))
    np.testing.assert_array_equal(out, right)
    assert valid.all()
    ramp = np.tile(np.arange(10, dtype=np.float32), (3, 1))
    out, valid = warp_right(ramp, np.ones((3, 10)))
    np.testing.assert_allclose(out[:, 1:], ramp[:, 1:] - 1)
    assert not valid[:, 0].any() and valid[:, 1:].all()


def test_warp_matches_loops(rng):
    right = rng.random((7, 12))
    disp = rng.uniform(-2, 14, (7, 12))
    out, valid = warp_right(right, disp)
    ref, ref_valid = oracles.warp(right.astype(np.float32), disp)
    np.testing.assert_array_equal(valid, ref_valid)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_filter_constant_disparity(rng):
    out = edge_guided_filter(np.full((9, 9), 3.5), rng.random((9, 9)), rng.random((9, 9)))
    np.testing.assert_allclose(out, 3.5, atol=1e-12)


def test_filter_infinite_color_is_gaussian(rng):
    d = rng.random((15, 17))
    out = edge_guided_filter(d, rng.random((15, 17)), rng.random((15, 17)), radius=4,
                             sigma_color=np.inf, sigma_space=2.0)
    # normalized truncated Gaussian: blur the map and the support with the same kernel
    num = gaussian_filter(d, 2.0, mode="constant", truncate=2.0)
    den = gaussian_filter(np.ones_like(d), 2.0, mode="constant", truncate=2.0)
    np.testing.assert_allclose(out, num / den, atol=1e-4)


def test_filter_matches_loops(rng):
    d = rng.uniform(0, 20, (10, 11))
    left = rng.random((10, 11)).astype(np.float32)
    wr = rng.random((10, 11))
    valid = rng.random((10, 11)) > 0.2
    out = edge_guided_filter(d, left, wr, valid, radius=2, sigma_color=0.2, sigma_space=1.5)
    ref = oracles.bilateral(d, left, wr, valid, 2, 0.2, 1.5)
    np.testing.assert_allclose(out, ref, atol=1e-6)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31 - 1))
def test_filter_stays_in_range(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(-5, 5, (8, 8))
    out = edge_guided_filter(d, rng.random((8, 8)), rng.random((8, 8)), radius=2)
    assert out.min() >= d.min() - 1e-12 and out.max() <= d.max() + 1e-12


def test_constant_scene_is_fixed_point():
    img = np.full((16, 16), 0.4)
    disp = weighted_upsample(np.full((4, 4), 1.5), img)
    warped, valid = warp_right(img, disp)
    out = edge_guided_filter(disp, img, warped, valid)
    np.testing.assert_allclose(out, 6.0, atol=1e-12)


def test_filter_shape_mismatch():
    with pytest.raises(ValueError):
        edge_guided_filter(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))
