"""Seeded synthetic noise generators.

Levels follow the usual conventions: ``sigma`` on the 0-255 scale for the
Gaussian family, a half-width ``x`` for uniform noise, a density ``d`` for
the corruption kinds and a photon scale ``lambda`` for Poisson noise.

The circular, stripe and grid constructions are stand-ins: the exact
generators behind the reference benchmark are not published.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .image import RngState, as_image

NOISE_KINDS = (
    "gaussian",
    "uniform",
    "salt_pepper",
    "impulse",
    "bernoulli",
    "poisson",
    "speckle",
    "circular_pattern",
    "stripe",
    "grid",
    "channel_replicated_gaussian",
)
DENSITY_KINDS = frozenset({"salt_pepper", "impulse", "bernoulli"})

RING_RADIUS = 4
STRIPE_PERIOD = 8.0
STRIPE_ANGLES = (0.0, 30.0, 60.0)
GRID_SECOND_ANGLE_OFFSET = 90.0


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    level: float
    rng: RngState = field(default_factory=RngState)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.level > 0:
            raise ValueError(f"noise level must be positive, got {self.level}")
        if self.kind in DENSITY_KINDS and not self.level < 1:
            raise ValueError(f"density for {self.kind} must lie in (0, 1), got {self.level}")


def counted_mask(shape, density: float, gen: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly ``round(density * N)`` True entries."""
    n = int(np.prod(shape))
    k = int(math.floor(density * n + 0.5))
    flat = np.zeros(n, dtype=bool)
    flat[gen.choice(n, size=k, replace=False)] = True
    return flat.reshape(shape)


def ring_kernel(radius: int = RING_RADIUS) -> np.ndarray:
    """Unit-l2 ring of the given radius and thickness 1."""
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    k = (np.abs(np.hypot(yy, xx) - radius) <= 0.5).astype(np.float64)
    return k / np.sqrt(np.sum(k**2))


def stripe_field(h: int, w: int, angle_deg: float, amplitude: float, phase: float = 0.0) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = np.deg2rad(angle_deg)
    return amplitude * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / STRIPE_PERIOD + phase)


def apply_noise(clean, spec: NoiseSpec) -> np.ndarray:
    """Return ``clean`` corrupted according to ``spec``.

    The result is not clamped; clamping only happens when writing 8-bit files.
    """
    x = as_image(clean, "clean")
    gen = spec.rng.generator()
    kind, level = spec.kind, float(spec.level)
    c, h, w = x.shape
    sigma = level / 255.0

    if kind == "gaussian":
        return x + gen.normal(0.0, sigma, size=x.shape)
    if kind == "uniform":
        return x + gen.uniform(-level, level, size=x.shape)
    if kind == "salt_pepper":
        mask = counted_mask((h, w), level, gen)
        values = (gen.random(int(mask.sum())) < 0.5).astype(np.float64)
        y = x.copy()
        y[:, mask] = values[np.newaxis, :]
        return y
    if kind == "impulse":
        mask = counted_mask(x.shape, level, gen)
        y = x.copy()
        y[mask] = gen.random(int(mask.sum()))
        return y
    if kind == "bernoulli":
        mask = counted_mask(x.shape, level, gen)
        y = x.copy()
        y[mask] = 0.0
        return y
    if kind == "poisson":
        return gen.poisson(np.clip(x, 0.0, None) * level) / level
    if kind == "speckle":
        return x + x * gen.normal(0.0, sigma, size=x.shape)
    if kind == "circular_pattern":
        white = gen.normal(0.0, 1.0, size=x.shape)
        kern = ring_kernel()
        n = np.stack([ndimage.convolve(p, kern, mode="wrap") for p in white])
        n *= sigma / n.std()
        return x + n
    if kind in ("stripe", "grid"):
        phases = gen.uniform(0.0, 2 * np.pi, size=(c, 2))
        n = np.empty_like(x)
        for ch in range(c):
            angle = STRIPE_ANGLES[ch % 3]
            n[ch] = stripe_field(h, w, angle, sigma, phases[ch, 0])
            if kind == "grid":
                n[ch] += stripe_field(h, w, angle + GRID_SECOND_ANGLE_OFFSET, sigma, phases[ch, 1])
        return x + n
    if kind == "channel_replicated_gaussian":
        plane = gen.normal(0.0, sigma, size=(h, w))
        return x + plane[np.newaxis]
    raise ValueError(f"unhandled noise kind {kind!r}")


def mean_brightness(img) -> float:
    return float(np.mean(img))
