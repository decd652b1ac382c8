import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noisemorph.image import RngState
from noisemorph.metrics import autocorrelation
from noisemorph.noise import NOISE_KINDS, NoiseSpec, apply_noise, counted_mask, mean_brightness, ring_kernel

FLAT = np.full((3, 64, 64), 0.5)


def noisy(kind, level, img=FLAT, seed=0):
    return apply_noise(img, NoiseSpec(kind, level, RngState(seed)))


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("bogus", 1.0)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", 0.0)
    with pytest.raises(ValueError):
        NoiseSpec("salt_pepper", 1.0)


def test_gaussian_std_on_flat_image():
    y = noisy("gaussian", 25, np.full((1, 512, 512), 0.5), seed=3)
    assert abs((y - 0.5).std() / (25 / 255) - 1) < 0.02


def test_uniform_range_and_variance():
    n = noisy("uniform", 0.3, np.full((1, 256, 256), 0.5)) - 0.5
    assert n.min() >= -0.3 and n.max() <= 0.3
    assert abs(n.var() / (0.6**2 / 12) - 1) < 0.03


@pytest.mark.parametrize("kind", ["salt_pepper", "impulse", "bernoulli"])
def test_counted_corruption(kind):
    y = noisy(kind, 0.2, seed=7)
    changed = y != FLAT
    if kind == "salt_pepper":
        # whole pixels, all channels together, values 0 or 1
        per_pixel = changed.any(axis=0)
        assert np.array_equal(per_pixel, changed.all(axis=0))
        assert per_pixel.sum() == math.floor(0.2 * 64 * 64 + 0.5)
        assert set(np.unique(y[:, per_pixel])) <= {0.0, 1.0}
    elif kind == "bernoulli":
        assert changed.sum() == math.floor(0.2 * FLAT.size + 0.5)
        assert np.all(y[changed] == 0.0)
    else:
        # a replacement can coincide with 0.5 only with probability zero
        assert changed.sum() == math.floor(0.2 * FLAT.size + 0.5)
        assert y.min() >= 0.0 and y.max() <= 1.0


@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.0, 1.0))
def test_counted_mask_count(h, w, d):
    m = counted_mask((h, w), d, np.random.default_rng(0))
    assert m.sum() == math.floor(d * (h * w) + 0.5)


def test_poisson_moments():
    y = noisy("poisson", 25, np.full((1, 512, 512), 0.4), seed=5)
    assert abs(y.mean() / 0.4 - 1) < 0.01
    assert abs(y.var() / (0.4 / 25) - 1) < 0.05


def test_speckle_scales_with_signal():
    img = np.concatenate([np.full((1, 128, 64), 0.2), np.full((1, 128, 64), 0.8)], axis=2)
    n = noisy("speckle", 55, img, seed=2) - img
    s = 55 / 255
    assert abs(n[..., :64].std() / (0.2 * s) - 1) < 0.05
    assert abs(n[..., 64:].std() / (0.8 * s) - 1) < 0.05


@pytest.mark.parametrize("kind,level", [("gaussian", 25), ("uniform", 0.3), ("circular_pattern", 25),
                                        ("channel_replicated_gaussian", 15), ("speckle", 55)])
def test_zero_mean_generators(kind, level):
    n = noisy(kind, level, np.full((3, 128, 128), 0.5), seed=11) - 0.5
    # channel-replicated noise has only H*W independent samples, circular is correlated;
    # use the per-plane sample count and the field's own std.
    count = n[0].size
    assert abs(n.mean()) < 3 * n.std() / math.sqrt(count) * (3 if kind == "circular_pattern" else 1)


def test_ring_kernel_shape():
    k = ring_kernel()
    assert k.shape == (9, 9)
    assert math.isclose(np.sum(k**2), 1.0)
    assert k[4, 4] == 0 and k[4, 0] > 0 and k[0, 4] > 0


def test_circular_pattern_correlation_and_level():
    n = noisy("circular_pattern", 25, np.full((3, 128, 128), 0.5), seed=4) - 0.5
    assert math.isclose(n.std(), 25 / 255, rel_tol=1e-9)
    assert autocorrelation(n, lag=4) > 0.1
    white = noisy("gaussian", 25, np.full((3, 128, 128), 0.5), seed=4) - 0.5
    assert abs(autocorrelation(white, lag=4)) < 0.03


def test_stripe_and_grid_are_periodic():
    for kind in ("stripe", "grid"):
        n = noisy(kind, 25, np.full((3, 64, 64), 0.5), seed=1) - 0.5
        # channel 0 stripes run at 0 degrees: period 8 along x, constant along y
        np.testing.assert_allclose(n[0, :, 8:], n[0, :, :-8], atol=1e-12)
        if kind == "stripe":
            np.testing.assert_allclose(n[0, 1:], n[0, :-1], atol=1e-12)
        assert not np.allclose(n[0], n[1])


def test_channel_replicated_is_identical_across_channels():
    n = noisy("channel_replicated_gaussian", 15, seed=9) - FLAT
    np.testing.assert_array_equal(n[0], n[1])
    np.testing.assert_array_equal(n[0], n[2])


@pytest.mark.parametrize("kind", NOISE_KINDS)
def test_deterministic(kind):
    level = 0.2 if kind in ("salt_pepper", "impulse", "bernoulli") else 25
    a = noisy(kind, level, seed=42)
    np.testing.assert_array_equal(a, noisy(kind, level, seed=42))
    assert not np.array_equal(a, noisy(kind, level, seed=43))
    assert a.shape == FLAT.shape


def test_mean_brightness():
    assert mean_brightness(np.zeros((1, 8, 8))) == 0
    assert mean_brightness(np.ones((1, 8, 8))) == 1
    half = np.zeros((1, 8, 8))
    half[:, :4] = 1
    assert mean_brightness(half) == 0.5
