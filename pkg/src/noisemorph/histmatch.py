"""Interval-based histogram matching of noise fields toward a Gaussian target.

Every variant follows the same two-step quantile map: a value's cumulative
probability is read off the source CDF by linear interpolation over the
interval edges, then pushed through the inverse of the target CDF, again by
linear interpolation.  The variants differ in what forms a matching unit
(a whole channel, an overlapping block, or the real/imaginary parts of a
channel's 2-D DFT) and in how the source intervals are chosen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .image import RngState, check_same_shape

DEGENERATE_WIDEN = 1e-6
LOCAL_GRID_MARGIN = 0.5
GAUSSIAN_SPAN = 5.0


@dataclass(frozen=True)
class EmpiricalCdf:
    """Interval edges and the cumulative probability at each edge.

    ``cum[0] == 0`` and ``cum[-1] == 1``; both arrays have ``bins + 1`` entries.
    """

    edges: np.ndarray
    cum: np.ndarray

    def __post_init__(self):
        e, c = np.asarray(self.edges), np.asarray(self.cum)
        if e.ndim != 1 or e.shape != c.shape or e.size < 2:
            raise ValueError("edges and cum must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(np.diff(c) < 0) or c[0] != 0.0 or c[-1] != 1.0:
            raise ValueError("cum must be non-decreasing from 0 to 1")

    @property
    def bins(self) -> int:
        return self.edges.size - 1


@dataclass(frozen=True)
class MatchConfig:
    sigma0: float = 15.0 / 255.0
    bins: int = 2000
    stabilizer_sigma: float = 0.01
    block: int = 36
    overlap: int = 4
    rng: RngState = field(default_factory=RngState)

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if not self.block > self.overlap >= 0:
            raise ValueError("need block > overlap >= 0")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.stabilizer_sigma < 0:
            raise ValueError("stabilizer_sigma must be >= 0")


def add_stabilizer_noise(n, std: float, rng: RngState) -> np.ndarray:
    """Return ``n`` plus i.i.d. ``N(0, std)`` samples; ``std == 0`` is the identity."""
    n = np.asarray(n, dtype=np.float64)
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0:
        return n.copy()
    return n + rng.generator().normal(0.0, std, size=n.shape)


def build_cdf(samples, bins: int, edges_override=None) -> EmpiricalCdf:
    """Cumulative histogram over ``bins`` equal intervals of the sample range.

    With ``edges_override`` the given edges are used instead and samples
    outside them are counted into the end intervals.  A constant sample set
    gets its range widened by ``1e-6`` on both sides.
    """
    v = np.asarray(samples, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least two samples")
    if edges_override is not None:
        edges = np.asarray(edges_override, dtype=np.float64)
        v = np.clip(v, edges[0], edges[-1])
    else:
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            lo, hi = lo - DEGENERATE_WIDEN, hi + DEGENERATE_WIDEN
        edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(v, bins=edges)
    cum = np.concatenate(([0.0], np.cumsum(counts) / v.size))
    cum[-1] = 1.0
    return EmpiricalCdf(edges, cum)


def gaussian_cdf_reference(sigma0: float, bins: int) -> EmpiricalCdf:
    """Analytic ``N(0, sigma0)`` CDF on ``bins`` intervals over ``+-5 sigma0``."""
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    edges = np.linspace(-GAUSSIAN_SPAN * sigma0, GAUSSIAN_SPAN * sigma0, bins + 1)
    phi = ndtr(edges / sigma0)
    cum = (phi - phi[0]) / (phi[-1] - phi[0])
    cum[0], cum[-1] = 0.0, 1.0
    return EmpiricalCdf(edges, cum)


def inverse_cdf(cdf: EmpiricalCdf, probs) -> np.ndarray:
    """Piecewise-linear inverse of ``cdf``.

    On a flat stretch of the CDF the lowest matching edge is returned, which
    keeps the map single-valued and non-decreasing.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, 1.0)
    cum, edges = cdf.cum, cdf.edges
    hi = np.searchsorted(cum, p, side="left")
    hi = np.clip(hi, 1, cum.size - 1)
    lo = hi - 1
    span = cum[hi] - cum[lo]
    t = np.where(span > 0, (p - cum[lo]) / np.where(span > 0, span, 1.0), 1.0)
    out = edges[lo] + np.clip(t, 0.0, 1.0) * (edges[hi] - edges[lo])
    # p == 0 sits on cum[0] and maps to the leftmost edge.
    return np.where(p <= cum[0], edges[0], out)


def match_values(values, source: EmpiricalCdf, target: EmpiricalCdf) -> np.ndarray:
    """Quantile-map ``values`` from the ``source`` distribution onto ``target``."""
    v = np.asarray(values, dtype=np.float64)
    probs = np.interp(v, source.edges, source.cum)
    return inverse_cdf(target, probs).reshape(v.shape)


def global_hist_match(n1, cfg: MatchConfig) -> np.ndarray:
    """Match each channel as a whole to ``N(0, sigma0)``."""
    n1 = np.asarray(n1, dtype=np.float64)
    target = gaussian_cdf_reference(cfg.sigma0, cfg.bins)
    out = np.empty_like(n1)
    for c in range(n1.shape[0]):
        out[c] = match_values(n1[c], build_cdf(n1[c], cfg.bins), target)
    return out


def block_starts(dim: int, block: int, overlap: int) -> list[int]:
    """Block origins with stride ``block - overlap``; the last one is flush with the border."""
    if dim <= block:
        return [0]
    stride = block - overlap
    starts = list(range(0, dim - block + 1, stride))
    if starts[-1] != dim - block:
        starts.append(dim - block)
    return starts


def local_grid(cfg: MatchConfig) -> np.ndarray:
    """Shared source interval division used by every block."""
    half = GAUSSIAN_SPAN * cfg.sigma0 + LOCAL_GRID_MARGIN
    return np.linspace(-half, half, cfg.bins + 1)


def local_hist_match(n1, cfg: MatchConfig) -> np.ndarray:
    """Match overlapping ``block x block`` tiles independently and average overlaps."""
    n1 = np.asarray(n1, dtype=np.float64)
    c, h, w = n1.shape
    target = gaussian_cdf_reference(cfg.sigma0, cfg.bins)
    grid = local_grid(cfg)
    acc = np.zeros_like(n1)
    hits = np.zeros((h, w))
    ys = block_starts(h, cfg.block, cfg.overlap)
    xs = block_starts(w, cfg.block, cfg.overlap)
    for y0 in ys:
        for x0 in xs:
            sl = (slice(y0, y0 + cfg.block), slice(x0, x0 + cfg.block))
            hits[sl] += 1.0
            for ch in range(c):
                tile = n1[ch][sl]
                acc[ch][sl] += match_values(tile, build_cdf(tile, cfg.bins, edges_override=grid), target)
    return acc / hits


def frequency_target(shape: tuple[int, int], cfg: MatchConfig, rng: RngState) -> EmpiricalCdf:
    """CDF of the real part of the DFT of a sampled ``N(0, sigma0)`` field."""
    n0 = rng.generator().normal(0.0, cfg.sigma0, size=shape)
    return build_cdf(np.fft.fft2(n0).real, cfg.bins)


def frequency_hist_match(n2, cfg: MatchConfig, rng: RngState | None = None) -> np.ndarray:
    """Match the real and imaginary DFT parts of each channel to a white target.

    The inverse transform's imaginary residue (conjugate symmetry is not
    enforced) is dropped.
    """
    n2 = np.asarray(n2, dtype=np.float64)
    rng = cfg.rng if rng is None else rng
    out = np.empty_like(n2)
    for c in range(n2.shape[0]):
        target = frequency_target(n2.shape[1:], cfg, rng.child(c))
        spec = np.fft.fft2(n2[c])
        re, im = spec.real, spec.imag
        re_m = match_values(re, build_cdf(re, cfg.bins), target)
        im_m = match_values(im, build_cdf(im, cfg.bins), target)
        out[c] = np.fft.ifft2(re_m + 1j * im_m).real
    return out


def assemble_transformed(s, n2) -> np.ndarray:
    check_same_shape(s, n2)
    return np.asarray(s, dtype=np.float64) + np.asarray(n2, dtype=np.float64)
