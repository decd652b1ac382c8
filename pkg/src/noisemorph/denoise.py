"""Gaussian denoisers and random replacement refinement.

A denoiser exposes ``denoise_fixed(img, sigma)`` for a single known noise
level and, optionally, ``denoise_flexible(img, sigma_map)`` for a per-pixel
level map.  The built-in backend is sliding-window DCT hard thresholding;
``ExternalDenoiser`` wraps any program that speaks the NTF1 pipe protocol.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dctn, idctn

from .histmatch import block_starts
from .image import ImageFormatError, RngState, check_same_shape, decode_ntf, encode_ntf

PATCH = 8
STRIDE = 4
THRESHOLD_FACTOR = 2.7


class DenoiserError(RuntimeError):
    """Raised when a denoiser backend fails or breaks its protocol."""


class Denoiser:
    supports_flexible = False

    def denoise_fixed(self, img, sigma: float) -> np.ndarray:
        raise NotImplementedError

    def denoise_flexible(self, img, sigma_map) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no level-map mode")


@dataclass(frozen=True)
class RefineConfig:
    probability: float = 0.3
    rounds: int = 4
    rng: RngState = field(default_factory=RngState)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("replacement probability must lie in [0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


def _dct_threshold(x: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Hard-threshold every 8x8 window; ``thresholds`` has one value per window."""
    ys, xs = _window_grid(*x.shape[1:])
    win = sliding_window_view(x, (PATCH, PATCH), axis=(1, 2))[:, ys][:, :, xs]
    coef = dctn(win, axes=(-2, -1), norm="ortho")
    keep = np.abs(coef) > thresholds[np.newaxis, :, :, np.newaxis, np.newaxis]
    keep[..., 0, 0] = True
    rec = idctn(np.where(keep, coef, 0.0), axes=(-2, -1), norm="ortho")

    acc = np.zeros_like(x)
    hits = np.zeros(x.shape[1:])
    for a, y0 in enumerate(ys):
        for b, x0 in enumerate(xs):
            acc[:, y0 : y0 + PATCH, x0 : x0 + PATCH] += rec[:, a, b]
            hits[y0 : y0 + PATCH, x0 : x0 + PATCH] += 1.0
    return acc / hits


def _window_grid(h: int, w: int) -> tuple[list[int], list[int]]:
    return block_starts(h, PATCH, PATCH - STRIDE), block_starts(w, PATCH, PATCH - STRIDE)


class DctDenoiser(Denoiser):
    """Sliding 8x8 DCT hard thresholding at ``2.7 sigma``, channel by channel.

    Overlapping windows (stride 4, the last one flush with the border) are
    averaged with equal weights.  The DC coefficient is never thresholded.
    """

    supports_flexible = True

    def denoise_fixed(self, img, sigma: float) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64)
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if sigma == 0:
            return x.copy()
        ys, xs = _window_grid(*x.shape[1:])
        thr = np.full((len(ys), len(xs)), THRESHOLD_FACTOR * sigma)
        return _dct_threshold(x, thr)

    def denoise_flexible(self, img, sigma_map) -> np.ndarray:
        """Per-window threshold from the mean ``|sigma_map|`` over the window.

        Pixels whose level is exactly zero pass through unchanged, and a
        constant map gives exactly the fixed-level result.
        """
        x = np.asarray(img, dtype=np.float64)
        smap = np.abs(np.asarray(sigma_map, dtype=np.float64))
        check_same_shape(x, smap)
        if np.all(smap == smap.flat[0]):
            return self.denoise_fixed(x, float(smap.flat[0]))
        ys, xs = _window_grid(*x.shape[1:])
        level = sliding_window_view(smap.mean(axis=0), (PATCH, PATCH))[ys][:, xs].mean(axis=(-2, -1))
        out = _dct_threshold(x, THRESHOLD_FACTOR * level)
        return np.where(smap == 0, x, out)


class ExternalDenoiser(Denoiser):
    """Runs ``<command> --sigma <s>`` or ``<command> --sigma-map <path>``.

    The image goes to stdin as one NTF1 container and the program must write
    exactly one container of the same shape to stdout.
    """

    supports_flexible = True

    def __init__(self, command: str, timeout: float | None = None):
        self.argv = shlex.split(command)
        if not self.argv:
            raise DenoiserError("empty denoiser command")
        if shutil.which(self.argv[0]) is None:
            raise DenoiserError(f"denoiser program not found: {self.argv[0]}")
        self.timeout = timeout

    def _run(self, img: np.ndarray, extra: list[str]) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64)
        try:
            proc = subprocess.run(
                self.argv + extra, input=encode_ntf(x), capture_output=True, timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise DenoiserError(f"cannot run {self.argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            msg = proc.stderr.decode(errors="replace").strip()
            raise DenoiserError(f"{self.argv[0]} exited with status {proc.returncode}: {msg}")
        try:
            out = decode_ntf(proc.stdout)
        except ImageFormatError as exc:
            raise DenoiserError(f"{self.argv[0]} broke the output protocol: {exc}") from exc
        if out.shape != x.shape:
            raise DenoiserError(f"{self.argv[0]} returned shape {out.shape}, expected {x.shape}")
        if not np.all(np.isfinite(out)):
            raise DenoiserError(f"{self.argv[0]} returned non-finite samples")
        return out

    def denoise_fixed(self, img, sigma: float) -> np.ndarray:
        return self._run(img, ["--sigma", repr(float(sigma))])

    def denoise_flexible(self, img, sigma_map) -> np.ndarray:
        check_same_shape(img, sigma_map)
        fd, path = tempfile.mkstemp(suffix=".ntf")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(encode_ntf(np.asarray(sigma_map, dtype=np.float64)))
            return self._run(img, ["--sigma-map", path])
        finally:
            os.unlink(path)


def register_external_denoiser(spec: str, timeout: float | None = None) -> Denoiser:
    """Build a denoiser from ``builtin`` or ``exec:<command line>``."""
    if spec in ("builtin", "dct"):
        return DctDenoiser()
    if spec.startswith("exec:"):
        return ExternalDenoiser(spec[5:], timeout=timeout)
    raise ValueError(f"unknown denoiser spec {spec!r}; use 'builtin' or 'exec:<command>'")


def random_replacement_refine(denoised, transformed, den: Denoiser, sigma0: float, cfg: RefineConfig) -> np.ndarray:
    """Average of ``rounds`` re-denoised mixtures of ``denoised`` and ``transformed``.

    Every round starts from ``denoised`` and swaps in whole pixels (all
    channels together) of ``transformed`` with probability ``p``.
    """
    d = np.asarray(denoised, dtype=np.float64)
    t = np.asarray(transformed, dtype=np.float64)
    check_same_shape(d, t)
    if cfg.rounds == 0:
        return d.copy()
    acc = np.zeros_like(d)
    for r in range(cfg.rounds):
        mask = cfg.rng.child(r).generator().random(d.shape[1:]) < cfg.probability
        acc += den.denoise_fixed(np.where(mask, t, d), sigma0)
    return acc / cfg.rounds
