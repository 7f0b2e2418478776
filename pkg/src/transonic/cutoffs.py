"""Smooth cut-off functions on [0, R_*] built from exp(-1/(1-t^2)) bumps.

Two families indexed by k = 1..m-1 with width parameter r:

* double-bumped ``eta``: two plateaus [ (3k-1)r/2, (3k+1)r/2 ] and its
  mirror about R_*, supported in the slightly larger open intervals;
* single-bumped ``zeta``: plateau [ (3k+1)r/2, R_* - (3k+1)r/2 ],
  supported in ( 3kr/2, R_* - 3kr/2 ).

Every derivative of ``zeta`` is supported inside { eta = 1 }
(subordination), and derivatives scale like r^-j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

__all__ = ["bump", "smooth_step", "CutoffFamily", "admissible_r"]


def bump(t):
    """The standard C-infinity bump exp(-1/(1-t^2)) on (-1,1), 0 outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


_BUMP_MASS = quad(lambda u: float(bump(u)), -1.0, 1.0, epsabs=1e-15)[0]


def smooth_step(y):
    """C-infinity monotone step: 0 for y <= 0, 1 for y >= 1.

    Ratio construction from one-sided exponential profiles; closed form,
    so all derivatives are exact smooth functions of y.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[y <= 0.0] = 0.0
    out[y >= 1.0] = 1.0
    mid = (y > 0.0) & (y < 1.0)
    t = y[mid]
    a = np.exp(-1.0 / t)
    b = np.exp(-1.0 / (1.0 - t))
    out[mid] = a / (a + b)
    return out


def _plateau(x, a, b, c, d):
    """Smooth bump equal to 1 on [b, c], supported in (a, d)."""
    rise = smooth_step((x - a) / (b - a))
    fall = smooth_step((d - x) / (d - c))
    return np.minimum(rise, fall)


def admissible_r(R1: float, delta_star: float, m: int) -> float:
    """Largest admissible width parameter for the cut-off families."""
    return min(R1, delta_star) / (3.0 * (m - 1.0) + 2.0)


@dataclass(frozen=True)
class CutoffFamily:
    """One member of the eta/zeta cut-off family on [0, R_star]."""
    kind: str          # "eta" (double-bumped) or "zeta" (single-bumped)
    r: float
    k: int
    R_star: float

    def __post_init__(self):
        if self.kind not in ("eta", "zeta"):
            raise DomainError(f"unknown cutoff kind {self.kind!r}")
        if not self.r > 0:
            raise DomainError("r must be positive")
        if self.k < 1:
            raise DomainError("k must be at least 1")
        # plateaus must not collide with their mirrors
        if (3 * self.k + 2) * self.r / 2.0 >= self.R_star / 2.0:
            raise DomainError("r too large for this k and R_star")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r, k, R = self.r, self.k, self.R_star
        if self.kind == "eta":
            a, b = (3 * k - 2) * r / 2.0, (3 * k - 1) * r / 2.0
            c, d = (3 * k + 1) * r / 2.0, (3 * k + 2) * r / 2.0
            return _plateau(x, a, b, c, d) + _plateau(x, R - d, R - c, R - b, R - a)
        a, b = 3 * k * r / 2.0, (3 * k + 1) * r / 2.0
        return _plateau(x, a, b, R - b, R - a)

    def plateau_intervals(self):
        r, k, R = self.r, self.k, self.R_star
        if self.kind == "eta":
            return [((3 * k - 1) * r / 2.0, (3 * k + 1) * r / 2.0),
                    (R - (3 * k + 1) * r / 2.0, R - (3 * k - 1) * r / 2.0)]
        return [((3 * k + 1) * r / 2.0, R - (3 * k + 1) * r / 2.0)]

    def support_intervals(self):
        r, k, R = self.r, self.k, self.R_star
        if self.kind == "eta":
            return [((3 * k - 2) * r / 2.0, (3 * k + 2) * r / 2.0),
                    (R - (3 * k + 2) * r / 2.0, R - (3 * k - 2) * r / 2.0)]
        return [(3 * k * r / 2.0, R - 3 * k * r / 2.0)]
