"""Fourth-order finite differences on uniform tensor grids."""

from __future__ import annotations

import numpy as np


def diff1_4th(F: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """First derivative, 4th-order central with one-sided closures.

    ``F`` is sampled on a uniform grid with spacing ``h`` along ``axis``.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[axis] < 5:
        raise ValueError("need at least 5 nodes for 4th-order differences")
    F = np.moveaxis(F, axis, 0)
    D = np.empty_like(F)
    # interior: (f[i-2] - 8 f[i-1] + 8 f[i+1] - f[i+2]) / (12 h)
    D[2:-2] = (F[:-4] - 8.0 * F[1:-3] + 8.0 * F[3:-1] - F[4:]) / (12.0 * h)
    D[0] = (-25.0 * F[0] + 48.0 * F[1] - 36.0 * F[2] + 16.0 * F[3] - 3.0 * F[4]) / (12.0 * h)
    D[1] = (-3.0 * F[0] - 10.0 * F[1] + 18.0 * F[2] - 6.0 * F[3] + F[4]) / (12.0 * h)
    D[-2] = -(-3.0 * F[-1] - 10.0 * F[-2] + 18.0 * F[-3] - 6.0 * F[-4] + F[-5]) / (12.0 * h)
    D[-1] = -(-25.0 * F[-1] + 48.0 * F[-2] - 36.0 * F[-3] + 16.0 * F[-4] - 3.0 * F[-5]) / (12.0 * h)
    return np.moveaxis(D, 0, axis)
