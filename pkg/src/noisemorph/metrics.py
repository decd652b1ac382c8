"""Image quality and noise-distribution metrics."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .image import check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB over all samples jointly; ``inf`` for identical inputs."""
    check_same_shape(a, b)
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable correlation keeping only positions where the window fits.
    r = g.size // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")
    y = ndimage.correlate1d(y, g, axis=1, mode="constant")
    return y[r:-r, r:-r]


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over channels."""
    check_same_shape(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[np.newaxis], b[np.newaxis]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = _gaussian_kernel()
    vals = []
    for x, y in zip(a, b):
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def ks_statistic(samples, sigma0: float) -> float:
    """Kolmogorov-Smirnov distance between the samples and ``N(0, sigma0)``."""
    v = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = v.size
    if n < 2:
        raise ValueError("need at least two samples")
    phi = ndtr(v / sigma0)
    upper = np.arange(1, n + 1) / n - phi
    lower = phi - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def spectral_flatness(n) -> float:
    """Geometric over arithmetic mean of the power spectrum, DC excluded.

    Multi-channel fields are averaged over channels.
    """
    x = np.asarray(n, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    vals = []
    for plane in x:
        p = np.abs(np.fft.fft2(plane)).ravel() ** 2
        p = p[1:]
        if not np.any(p > 0):
            raise ValueError("spectral flatness is undefined for a constant field")
        p = np.maximum(p, np.finfo(np.float64).tiny)
        vals.append(np.exp(np.mean(np.log(p))) / np.mean(p))
    return float(np.mean(vals))


def autocorrelation(n, lag: int = 1, axis: int = -1) -> float:
    """Normalised sample autocorrelation at ``lag`` along one spatial axis, averaged over channels."""
    x = np.asarray(n, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    vals = []
    for plane in x:
        p = plane - plane.mean()
        a = np.moveaxis(p, axis, -1)
        num = np.sum(a[..., lag:] * a[..., :-lag])
        vals.append(num / np.sum(p * p))
    return float(np.mean(vals))


def cross_channel_correlation(n, patch: int = 8) -> float:
    """Mean Pearson correlation between channel pairs inside ``patch x patch`` tiles."""
    x = np.asarray(n, dtype=np.float64)
    c, h, w = x.shape
    if c < 2:
        raise ValueError("need at least two channels")
    hy, wx = h // patch, w // patch
    tiles = x[:, : hy * patch, : wx * patch].reshape(c, hy, patch, wx, patch)
    tiles = tiles.transpose(1, 3, 0, 2, 4).reshape(hy * wx, c, patch * patch)
    tiles = tiles - tiles.mean(axis=-1, keepdims=True)
    norms = np.sqrt(np.sum(tiles**2, axis=-1))
    vals = []
    for i in range(c):
        for j in range(i + 1, c):
            den = norms[:, i] * norms[:, j]
            ok = den > 0
            vals.append(np.sum(tiles[ok, i] * tiles[ok, j], axis=-1) / den[ok])
    return float(np.mean(np.concatenate(vals)))
