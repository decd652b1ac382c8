import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from noisemorph.metrics import (
    autocorrelation,
    cross_channel_correlation,
    ks_statistic,
    psnr,
    spectral_flatness,
    ssim,
)


def test_psnr_closed_forms():
    a = np.zeros((3, 8, 8))
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a + 0.5, peak=2.0) == pytest.approx(10 * math.log10(16))
    with pytest.raises(ValueError):
        psnr(a, np.zeros((3, 8, 9)))


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_psnr_and_ssim_against_skimage(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 32, 40))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-10)
    want = structural_similarity(
        a, b, channel_axis=0, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    assert ssim(a, b) == pytest.approx(want, abs=1e-10)


def test_ssim_identity_and_size():
    a = np.random.default_rng(0).random((1, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ssim(np.zeros((1, 10, 20)), np.zeros((1, 10, 20)))


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0))
def test_ks_against_scipy(seed, sigma0):
    x = np.random.default_rng(seed).normal(0.0, sigma0 * 1.2, 500)
    assert ks_statistic(x, sigma0) == pytest.approx(stats.kstest(x, "norm", args=(0, sigma0)).statistic, abs=1e-12)


def test_ks_examples():
    assert ks_statistic([0.0, 0.0], 1.0) == pytest.approx(0.5)
    assert ks_statistic([-100.0, 100.0], 1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ks_statistic([0.0], 1.0)


def test_spectral_flatness():
    rng = np.random.default_rng(1)
    white = rng.standard_normal((1, 128, 128))
    smooth = white + np.roll(white, 1, -1) + np.roll(white, 1, -2) + np.roll(white, (1, 1), (-2, -1))
    assert 0.5 < spectral_flatness(white) < 0.6  # exp(-gamma) for exponential periodogram
    assert spectral_flatness(smooth) < spectral_flatness(white) - 0.2
    with pytest.raises(ValueError):
        spectral_flatness(np.ones((8, 8)))


def test_autocorrelation():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((1, 256, 256))
    assert abs(autocorrelation(w)) < 0.02
    ma = w + np.roll(w, 1, -1)
    assert autocorrelation(ma, 1) == pytest.approx(0.5, abs=0.02)
    assert autocorrelation(ma, 1, axis=-2) == pytest.approx(0.0, abs=0.02)


def test_cross_channel_correlation():
    rng = np.random.default_rng(3)
    base = rng.standard_normal((64, 64))
    assert cross_channel_correlation(np.stack([base] * 3)) == pytest.approx(1.0)
    assert abs(cross_channel_correlation(rng.standard_normal((3, 64, 64)))) < 0.03
    assert cross_channel_correlation(np.stack([base, -base])) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        cross_channel_correlation(np.zeros((1, 8, 8)))
