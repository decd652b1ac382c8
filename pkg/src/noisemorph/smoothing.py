"""Initial noise estimation: median pre-filter plus relative total variation.

The smoothing step solves, per channel,

    (I + alpha * D^T diag(w) D) s = o1

where ``D`` stacks forward horizontal and vertical differences (zero at the
far border) and ``w`` are the windowed relative-variation weights.  The
weights are recomputed from the current estimate on every outer iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from . import _pcg
from .image import as_image

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class RtvConfig:
    alpha: float = 0.015
    sigma_g: float = 3.0
    iterations: int = 4
    epsilon_w: float = 1e-3
    epsilon_v: float = 1e-3
    window_radius: int | None = None
    solver_tol: float = 1e-6
    solver_max_iter: int = 2000
    mic_relax: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.sigma_g <= 0 or self.iterations < 1:
            raise ValueError("RtvConfig needs alpha >= 0, sigma_g > 0 and iterations >= 1")
        if self.epsilon_w <= 0 or self.epsilon_v <= 0:
            raise ValueError("RTV stabilizers must be positive")
        if not 0.0 <= self.mic_relax <= 1.0:
            raise ValueError("mic_relax must lie in [0, 1]")

    @property
    def radius(self) -> int:
        if self.window_radius is not None:
            return int(self.window_radius)
        return int(math.ceil(2 * self.sigma_g))


@dataclass
class SmoothResult:
    smoothed: np.ndarray
    residual: np.ndarray
    filtered: np.ndarray


def median_filter(img, window: int = 3) -> np.ndarray:
    """Per-channel spatial median with edge replication."""
    x = np.asarray(img, dtype=np.float64)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be a positive odd integer, got {window}")
    if window == 1:
        return x.copy()
    return ndimage.median_filter(x, size=(1, window, window), mode="nearest")


def forward_gradients(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gh = np.zeros_like(plane)
    gv = np.zeros_like(plane)
    gh[:, :-1] = plane[:, 1:] - plane[:, :-1]
    gv[:-1, :] = plane[1:, :] - plane[:-1, :]
    return gh, gv


def gaussian_window(sigma: float, radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _windowed(plane: np.ndarray, g1: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(plane, g1, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g1, axis=1, mode="reflect")


def rtv_weights(img, cfg: RtvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical per-pixel weights, each shaped like ``img``.

    w = 1 / ((|G * grad| + eps_w) * (|grad| + eps_v)) with a normalised
    truncated Gaussian window ``G``.
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    g1 = gaussian_window(cfg.sigma_g, cfg.radius)
    wh = np.empty_like(x)
    wv = np.empty_like(x)
    for c, plane in enumerate(x):
        gh, gv = forward_gradients(plane)
        wh[c] = 1.0 / ((np.abs(_windowed(gh, g1)) + cfg.epsilon_w) * (np.abs(gh) + cfg.epsilon_v))
        wv[c] = 1.0 / ((np.abs(_windowed(gv, g1)) + cfg.epsilon_w) * (np.abs(gv) + cfg.epsilon_v))
    return wh, wv


def difference_operators(h: int, w: int) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse forward-difference matrices on a row-major ``h x w`` grid."""

    def d1(n):
        main = -np.ones(n)
        main[-1] = 0.0
        return sparse.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n), format="csr")

    dh = sparse.kron(sparse.identity(h), d1(w), format="csr")
    dv = sparse.kron(d1(h), sparse.identity(w), format="csr")
    return dh, dv


def system_matrix(wh: np.ndarray, wv: np.ndarray, alpha: float) -> sparse.csr_matrix:
    """``I + alpha * (Dh^T Wh Dh + Dv^T Wv Dv)`` for one channel."""
    h, w = wh.shape
    dh, dv = difference_operators(h, w)
    lap = dh.T @ sparse.diags(wh.ravel()) @ dh + dv.T @ sparse.diags(wv.ravel()) @ dv
    return (sparse.identity(h * w, format="csr") + alpha * lap).tocsr()


def _grad_t(gh: np.ndarray, gv: np.ndarray) -> np.ndarray:
    # Adjoint of forward_gradients on (..., H, W) stacks; last row/col of g is zero.
    out = -gh - gv
    out[..., :, 1:] += gh[..., :, :-1]
    out[..., 1:, :] += gv[..., :-1, :]
    return out


def _apply_system(s: np.ndarray, wh: np.ndarray, wv: np.ndarray, alpha: float) -> np.ndarray:
    gh = np.zeros_like(s)
    gv = np.zeros_like(s)
    gh[..., :, :-1] = s[..., :, 1:] - s[..., :, :-1]
    gv[..., :-1, :] = s[..., 1:, :] - s[..., :-1, :]
    return s + alpha * _grad_t(wh * gh, wv * gv)


def relative_residual(s, obs, weights, alpha: float) -> np.ndarray:
    """Per-channel ``||A s - o|| / ||o||``."""
    r = _apply_system(s, *weights, alpha) - obs
    num = np.sqrt(np.sum(r**2, axis=(-2, -1)))
    den = np.sqrt(np.sum(np.asarray(obs) ** 2, axis=(-2, -1)))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


def rtv_solve(obs, weights, cfg: RtvConfig, x0=None) -> np.ndarray:
    """Solve the weighted least-squares system per channel with PCG.

    ``x0`` warm-starts the iteration (defaults to ``obs``).  The returned
    solution always satisfies ``||A s - obs|| <= solver_tol * ||obs||``.
    """
    b = np.asarray(obs, dtype=np.float64)
    if b.ndim == 2:
        b = b[np.newaxis]
    wh, wv = (np.asarray(w, dtype=np.float64).reshape(b.shape) for w in weights)
    if cfg.alpha == 0:
        return b.copy()
    start = b if x0 is None else np.asarray(x0, dtype=np.float64).reshape(b.shape)
    out = np.empty_like(b)
    for c in range(b.shape[0]):
        bc = np.ascontiguousarray(b[c])
        if not np.any(bc):
            out[c] = 0.0
            continue
        out[c], it = _pcg.pcg(bc, np.ascontiguousarray(start[c]), np.ascontiguousarray(wh[c]),
                              np.ascontiguousarray(wv[c]), float(cfg.alpha), float(cfg.solver_tol),
                              int(cfg.solver_max_iter), float(cfg.mic_relax))
        log.debug("rtv_solve channel %d: %d PCG iterations", c, it)

    # Independent numpy check of the stencil residual.
    res = relative_residual(out, b, (wh, wv), cfg.alpha)
    worst = float(np.max(res))
    if worst > cfg.solver_tol:
        raise SolverError(f"PCG did not converge within {cfg.solver_max_iter} iterations", worst)
    return out


def rtv_objective(s, o1, weights, alpha: float) -> float:
    """Quadratic surrogate ``||s - o1||^2 + alpha * sum(w * grad(s)^2)``."""
    s = np.asarray(s, dtype=np.float64).reshape(np.shape(o1))
    wh, wv = weights
    total = float(np.sum((s - o1) ** 2))
    for c in range(s.shape[0]):
        gh, gv = forward_gradients(s[c])
        total += alpha * float(np.sum(wh[c] * gh**2) + np.sum(wv[c] * gv**2))
    return total


def rtv_smooth(img, cfg: RtvConfig = RtvConfig()) -> np.ndarray:
    o1 = np.asarray(img, dtype=np.float64)
    s = o1
    for _ in range(cfg.iterations):
        s = rtv_solve(o1, rtv_weights(s, cfg), cfg, x0=s)
    return s


def estimate_initial_noise(img, cfg: RtvConfig = RtvConfig(), median_window: int = 3) -> SmoothResult:
    """Smooth ``img`` and return the structure ``S`` and residual ``O - S``.

    The residual is taken against the unfiltered input, so it also carries
    whatever the median filter removed.
    """
    o = as_image(img)
    o1 = median_filter(o, median_window)
    s = rtv_smooth(o1, cfg)
    return SmoothResult(smoothed=s, residual=o - s, filtered=o1)
