"""Map denoised texture back from the transformed noise domain.

The denoiser saw ``T = S + N2`` and returned ``D``; what it kept of the noise
component is ``t2 = D - S``.  Assuming the kept fraction ``R = t2 / N2`` is
the same in both domains, the texture in the original domain is ``N1 * R``.
Where ``|R| > 1`` that assumption has clearly failed and ``t2`` is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import check_same_shape

DIVISION_GUARD = 1e-8
# D - S loses up to ulp(S) / |N2| of relative accuracy in R, so ratios this
# close to +-1 are treated as exactly +-1.
RATIO_SNAP = 1e-8


@dataclass
class TextureResult:
    d1: np.ndarray
    t1: np.ndarray
    ratio: np.ndarray


def guarded_ratio(num, den, guard: float = DIVISION_GUARD) -> np.ndarray:
    """``num / den`` with denominators below ``guard`` in magnitude replaced by ``+-guard``."""
    den = np.asarray(den, dtype=np.float64)
    sign = np.where(den < 0, -1.0, 1.0)
    safe = np.where(np.abs(den) < guard, sign * guard, den)
    return np.asarray(num, dtype=np.float64) / safe


def texture_transform(d, s, n1, n2) -> TextureResult:
    check_same_shape(d, s, n1, n2)
    d, s, n1 = (np.asarray(a, dtype=np.float64) for a in (d, s, n1))
    t2 = d - s
    ratio = guarded_ratio(t2, n2)
    ratio = np.where(np.abs(np.abs(ratio) - 1.0) <= RATIO_SNAP, np.sign(ratio), ratio)
    t1 = np.where(np.abs(ratio) <= 1.0, n1 * ratio, t2)
    return TextureResult(d1=s + t1, t1=t1, ratio=ratio)
