"""Invertible spatial rearrangements used to break noise correlation.

``pd_down`` tiles the four stride-2 phase images of a frame into a 2x2
mosaic, which turns short-range correlated noise into nearly independent
noise within each tile.  ``intrapatch_permute`` shuffles pixels inside small
patches with a different order for every channel, so noise that is identical
across channels stops lining up.  Both return a record that undoes the
rearrangement exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import RngState

PD_FACTOR = 2


@dataclass(frozen=True)
class ShuffleRecord:
    kind: str
    factor: int
    orig_dims: tuple[int, int]
    pad: tuple[int, int] = (0, 0)
    # intrapatch only: per-channel (source, destination) flat index pairs
    perms: tuple[tuple[np.ndarray, np.ndarray], ...] = ()

    @property
    def padded_dims(self) -> tuple[int, int]:
        return self.orig_dims[0] + self.pad[0], self.orig_dims[1] + self.pad[1]


def pd_down(img) -> tuple[np.ndarray, ShuffleRecord]:
    """Stride-2 pixel-shuffle into a 2x2 mosaic of phase images.

    Odd sides are first padded by one replicated row or column.
    """
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[-2:]
    pad = (h % 2, w % 2)
    if any(pad):
        x = np.pad(x, ((0, 0), (0, pad[0]), (0, pad[1])), mode="edge")
    hh, hw = x.shape[1] // 2, x.shape[2] // 2
    out = np.empty_like(x)
    for py in range(2):
        for px in range(2):
            out[:, py * hh : (py + 1) * hh, px * hw : (px + 1) * hw] = x[:, py::2, px::2]
    return out, ShuffleRecord("pd", PD_FACTOR, (h, w), pad)


def pd_up(img, rec: ShuffleRecord) -> np.ndarray:
    """Inverse of :func:`pd_down`, including removal of the padding."""
    y = np.asarray(img, dtype=np.float64)
    if rec.kind != "pd":
        raise ValueError(f"expected a pd record, got {rec.kind!r}")
    if y.shape[-2:] != rec.padded_dims:
        raise ValueError(f"image is {y.shape[-2:]}, record expects {rec.padded_dims}")
    hh, hw = y.shape[1] // 2, y.shape[2] // 2
    out = np.empty_like(y)
    for py in range(2):
        for px in range(2):
            out[:, py::2, px::2] = y[:, py * hh : (py + 1) * hh, px * hw : (px + 1) * hw]
    h, w = rec.orig_dims
    return out[:, :h, :w].copy()


def patch_ids(h: int, w: int, m: int) -> np.ndarray:
    """Flat patch index of every pixel; border patches may be smaller than ``m x m``."""
    nx = -(-w // m)
    rows = np.arange(h) // m
    cols = np.arange(w) // m
    return (rows[:, None] * nx + cols[None, :]).ravel()


def intrapatch_permute(img, m: int, rng: RngState) -> tuple[np.ndarray, ShuffleRecord]:
    """Randomly permute pixels within each ``m x m`` patch, independently per channel."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"intrapatch permutation needs a 3-channel image, got shape {x.shape}")
    if m < 1:
        raise ValueError("patch size must be >= 1")
    _, h, w = x.shape
    pid = patch_ids(h, w, m)
    # Destination slots grouped by patch, in raster order within each patch.
    dest = np.argsort(pid, kind="stable")
    out = np.empty_like(x)
    perms = []
    for c in range(3):
        keys = rng.child(c).generator().random(pid.size)
        src = np.lexsort((keys, pid))
        flat = np.empty(pid.size)
        flat[dest] = x[c].ravel()[src]
        out[c] = flat.reshape(h, w)
        perms.append((src, dest))
    return out, ShuffleRecord("intrapatch", m, (h, w), (0, 0), tuple(perms))


def intrapatch_restore(img, rec: ShuffleRecord) -> np.ndarray:
    y = np.asarray(img, dtype=np.float64)
    if rec.kind != "intrapatch":
        raise ValueError(f"expected an intrapatch record, got {rec.kind!r}")
    if y.shape != (len(rec.perms),) + rec.orig_dims:
        raise ValueError(f"image is {y.shape}, record expects {(len(rec.perms),) + rec.orig_dims}")
    out = np.empty_like(y)
    for c, (src, dest) in enumerate(rec.perms):
        flat = np.empty(src.size)
        flat[src] = y[c].ravel()[dest]
        out[c] = flat.reshape(rec.orig_dims)
    return out
