"""Coefficient fields of the degenerate linear operator

    L u = a11 d11 u + 2 a12 d12 u + d22 u + a1 d1 u

on a rectangle (0, R) x (-1, 1), the structure ("Kz") coefficients that
certify solvability, and the two constructive transformations used by the
solver: extension of the coefficients past x1 = R onto (0, R_*) with an
elliptic tail, and smoothing by an x1-direction mollifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RectBivariateSpline

from .cutoffs import bump, smooth_step, _BUMP_MASS
from .errors import DomainError, ExtensionFailureError
from .fd import diff1_4th

_WALL_TOL = 1e-8


@dataclass(frozen=True)
class KeldyshField:
    """Sampled (a11, a12, a1) on a uniform tensor grid, bicubic off-grid.

    ``meta`` carries structural constants produced by the pipeline
    (lambda, R_star, delta_star, omega, mu, ...).
    """
    x1: np.ndarray          # (n1,) uniform, ascending
    x2: np.ndarray          # (n2,) uniform, ascending, spanning [-1, 1]
    a11: np.ndarray         # (n1, n2)
    a12: np.ndarray
    a1: np.ndarray
    m: int = 4
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float)
        x2 = np.asarray(self.x2, dtype=float)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        for name in ("a11", "a12", "a1"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (x1.size, x2.size):
                raise DomainError(f"{name} has shape {arr.shape}, expected "
                                  f"{(x1.size, x2.size)}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        if self.m < 4:
            raise DomainError("regularity order m must be at least 4")
        if x1.size < 5 or x2.size < 5:
            raise DomainError("need at least 5 nodes per direction")
        scale = max(1.0, float(np.max(np.abs(self.a12))))
        wall = max(float(np.max(np.abs(self.a12[:, 0]))),
                   float(np.max(np.abs(self.a12[:, -1]))))
        if wall > _WALL_TOL * scale:
            raise DomainError(f"a12 must vanish on the walls (max {wall})")

    # -- geometry -------------------------------------------------------
    @property
    def R(self) -> float:
        return float(self.x1[-1])

    @property
    def h1(self) -> float:
        return float(self.x1[1] - self.x1[0])

    @property
    def h2(self) -> float:
        return float(self.x2[1] - self.x2[0])

    # -- off-grid evaluation --------------------------------------------
    @cached_property
    def _splines(self):
        return {name: RectBivariateSpline(self.x1, self.x2,
                                          getattr(self, name), kx=3, ky=3)
                for name in ("a11", "a12", "a1")}

    def at(self, name: str, x1, x2, grid: bool = False):
        return self._splines[name](x1, x2, grid=grid)

    # -- structural checks ----------------------------------------------
    def condition_report(self) -> dict:
        """Pointwise structure conditions: entrance ellipticity, exit
        degeneracy, wall compatibility.  Advisory, not enforced."""
        d2_a12 = diff1_4th(diff1_4th(self.a12, self.h2, axis=1),
                           self.h2, axis=1)
        report = {
            "entrance_min_det": float(np.min(self.a11[0] - self.a12[0] ** 2)),
            "exit_max_a11": float(np.max(self.a11[-1])),
            "wall_max_a12": max(float(np.max(np.abs(self.a12[:, 0]))),
                                float(np.max(np.abs(self.a12[:, -1])))),
            "wall_max_d2a11": self._wall_odd_derivative_max("a11"),
            "wall_max_d2a1": self._wall_odd_derivative_max("a1"),
            "wall_max_d22a12": max(float(np.max(np.abs(d2_a12[:, 0]))),
                                   float(np.max(np.abs(d2_a12[:, -1])))),
        }
        report["entrance_elliptic"] = report["entrance_min_det"] > 0
        report["exit_degenerate"] = report["exit_max_a11"] < 0
        return report

    def _wall_odd_derivative_max(self, name: str) -> float:
        d = diff1_4th(getattr(self, name), self.h2, axis=1)
        return max(float(np.max(np.abs(d[:, 0]))), float(np.max(np.abs(d[:, -1]))))


def kz_coefficient(field: KeldyshField, l: int) -> np.ndarray:
    """Structure coefficient Kz_l = a1 + ((2l-3)/2) d1 a11 - d2 a12."""
    if not 1 <= l <= field.m:
        raise DomainError(f"l must lie in [1, {field.m}], got {l}")
    d1_a11 = diff1_4th(field.a11, field.h1, axis=0)
    d2_a12 = diff1_4th(field.a12, field.h2, axis=1)
    return field.a1 + 0.5 * (2 * l - 3) * d1_a11 - d2_a12


def check_kz_condition(field: KeldyshField, m: int | None = None):
    """(ok, lambda): lambda = -max over l=1..m and the grid of Kz_l."""
    m = field.m if m is None else m
    worst = -math.inf
    # Kz_l is affine in l, so the extremes l=1, l=m suffice; all l are
    # evaluated anyway to keep the check shaped like its definition.
    for l in range(1, m + 1):
        worst = max(worst, float(np.max(kz_coefficient(field, l))))
    lam = -worst
    return lam > 0, lam


# ---------------------------------------------------------------------------
# extension past x1 = R

def _chi(x, lo, hi):
    """Smooth decreasing blend: 1 for x <= lo, 0 for x >= hi."""
    return 1.0 - smooth_step((np.asarray(x, dtype=float) - lo) / (hi - lo))


def extend_coefficients(field: KeldyshField,
                        max_doublings: int = 60) -> KeldyshField:
    """Extend (a11, a12, a1) onto (0, R_*) x (-1, 1).

    Reflects a11, a1 evenly and a12 oddly across x1 = R, picks the largest
    R_* <= 3R/2 keeping the Kz bound at half the input margin, then blends
    the tail to an elliptic constant state: a11 -> omega > 0 and a1 -> mu < 0,
    with omega doubled (from 1) until the coefficient matrix is uniformly
    elliptic where the blend is complete, and mu doubled in magnitude
    (from -1) until the Kz bound holds up to R_*.
    """
    ok, lam = check_kz_condition(field)
    if not ok:
        raise DomainError(f"input fails the Kz condition (lambda={lam})")
    R, h1 = field.R, field.h1
    x1_0 = float(field.x1[0])

    # --- reflected ("tilde") field on (x1_0, 2R), node-exact mirror
    mirror = 2.0 * R - field.x1[-2::-1]
    x1_t = np.concatenate([field.x1, mirror])
    a11_t = np.concatenate([field.a11, field.a11[-2::-1]], axis=0)
    a1_t = np.concatenate([field.a1, field.a1[-2::-1]], axis=0)
    a12_t = np.concatenate([field.a12, -field.a12[-2::-1]], axis=0)
    tilde = KeldyshField(x1_t, field.x2, a11_t, a12_t, a1_t, m=field.m)

    # --- R_*: largest point <= 3R/2 with max_l Kz_l <= -lambda/2 up to it
    kz_max = np.max([kz_coefficient(tilde, l) for l in (1, field.m)], axis=0)
    kz_line = np.max(kz_max, axis=1)          # worst over x2 per x1 node
    running = np.maximum.accumulate(kz_line)
    limit = 1.5 * R - 0.5 * x1_0              # 3R/2 measured from the origin
    eligible = (x1_t > R) & (x1_t <= limit + 1e-12) & (running <= -0.5 * lam)
    if not np.any(eligible):
        raise ExtensionFailureError(
            "no admissible R_* beyond R: Kz margin lost immediately")
    # largest certified grid node; the final FD grid must contain R_* as a
    # node anyway, so the search is snapped to the tilde grid
    idx = np.max(np.nonzero(eligible)[0])
    R_star = min(float(x1_t[idx]), limit)
    delta_star = (R_star - R) / 4.0
    if delta_star <= 0 or R_star - R < 2.0 * h1:
        raise ExtensionFailureError(
            f"extension margin too thin: R_*={R_star}, R={R}")

    # --- resample the tilde field on a uniform grid fine enough for the
    # chi transitions (width delta_star each), keeping original nodes
    q = max(1, int(math.ceil(h1 / (delta_star / 8.0))))
    h_new = h1 / q
    n_new = int(round((R_star - x1_0) / h_new)) + 1
    x1_e = x1_0 + h_new * np.arange(n_new)
    x1_e[-1] = min(x1_e[-1], R_star)
    a11_e = tilde.at("a11", x1_e, field.x2, grid=True)
    a12_e = tilde.at("a12", x1_e, field.x2, grid=True)
    a1_e = tilde.at("a1", x1_e, field.x2, grid=True)
    # splines reproduce knot values; snap the original block exactly anyway
    a11_e[::q][:field.x1.size] = field.a11
    a12_e[::q][:field.x1.size] = field.a12
    a1_e[::q][:field.x1.size] = field.a1

    chi1 = _chi(x1_e, R + 2.0 * delta_star, R + 3.0 * delta_star)[:, None]
    chi2 = _chi(x1_e, R + delta_star, R + 2.0 * delta_star)[:, None]

    # --- omega: ellipticity of [[a11*, a12], [a12, 1]] on the pure tail
    tail = x1_e >= R + 3.0 * delta_star
    omega = 1.0
    for _ in range(max_doublings):
        a11_tail = a11_e[tail] * chi1[tail] + omega * (1.0 - chi1[tail])
        # min eigenvalue of the symmetric 2x2 coefficient matrix
        tr = a11_tail + 1.0
        det_gap = (a11_tail - 1.0) ** 2 + 4.0 * a12_e[tail] ** 2
        min_eig = 0.5 * (tr - np.sqrt(det_gap))
        if np.all(min_eig >= 0.5 * omega):
            break
        omega *= 2.0
    else:
        raise ExtensionFailureError("omega search exceeded doubling budget")

    # --- mu: Kz bound with lambda/2 on [R + delta_star, R_*] for l <= m
    band = x1_e >= R + delta_star
    mu = -1.0
    for _ in range(max_doublings):
        a11_s = a11_e * chi1 + omega * (1.0 - chi1)
        a1_s = a1_e * chi1 + mu * (1.0 - chi2)
        cand = KeldyshField(x1_e, field.x2, a11_s, a12_e, a1_s, m=field.m)
        kz_worst = np.max([kz_coefficient(cand, l) for l in (1, field.m)], axis=0)
        if np.max(kz_worst[band]) <= -0.5 * lam:
            break
        mu *= 2.0
    else:
        raise ExtensionFailureError("mu search exceeded doubling budget")

    meta = dict(field.meta)
    meta.update({"lambda": lam, "R": R, "R_star": R_star,
                 "delta_star": delta_star, "omega": omega, "mu": mu,
                 "refine": q})
    return KeldyshField(x1_e, field.x2, a11_s, a12_e, a1_s, m=field.m,
                        meta=meta)


# ---------------------------------------------------------------------------
# mollification

def _reflection_weights(order: int = 4) -> np.ndarray:
    """Coefficients w_k with f(-s) = sum w_k f(k s) exact for cubics."""
    k = np.arange(1, order + 1, dtype=float)
    V = np.vander(k, order, increasing=True).T  # V[j] = k^j
    rhs = (-1.0) ** np.arange(order)
    return np.linalg.solve(V, rhs)


_REFL_W = _reflection_weights(4)


def mollify_coefficients(field: KeldyshField, tau: float) -> KeldyshField:
    """x1-direction convolution with the unit-mass bump of width tau.

    The field is first extended past both x1 ends by cubic-order
    reflection, so cubic profiles (hence the boundary values of smooth
    fields, to O(tau^4)) are reproduced.  a12 = 0 on the walls is
    preserved exactly since the smoothing acts along x1 only.
    """
    if not 0 < tau < 1:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    lo, hi = float(field.x1[0]), float(field.x1[-1])
    if 4.0 * tau >= hi - lo:
        raise DomainError("tau too large for the domain length")

    nodes, weights = leggauss(32)
    s = tau * nodes                       # kernel support [-tau, tau]
    w = weights * bump(nodes)
    w /= w.sum()                          # discrete unit mass: constants fixed

    splines = {name: field._splines[name] for name in ("a11", "a12", "a1")}

    def eval_rows(name, xpts):
        """Spline rows at arbitrary (possibly unsorted) x1 points."""
        order = np.argsort(xpts)
        vals = splines[name](xpts[order], field.x2, grid=True)
        out = np.empty_like(vals)
        out[order] = vals
        return out

    def sample(name, xq):
        """Evaluate the reflected extension of one field at x1 points xq
        (shape (nq,)) for all x2 rows at once."""
        xq = np.asarray(xq)
        out = np.empty((xq.size, field.x2.size))
        inside = (xq >= lo) & (xq <= hi)
        if np.any(inside):
            out[inside] = eval_rows(name, xq[inside])
        below = xq < lo
        if np.any(below):
            acc = np.zeros((int(below.sum()), field.x2.size))
            for wk, k in zip(_REFL_W, range(1, _REFL_W.size + 1)):
                acc += wk * eval_rows(name, lo + k * (lo - xq[below]))
            out[below] = acc
        above = xq > hi
        if np.any(above):
            acc = np.zeros((int(above.sum()), field.x2.size))
            for wk, k in zip(_REFL_W, range(1, _REFL_W.size + 1)):
                acc += wk * eval_rows(name, hi - k * (xq[above] - hi))
            out[above] = acc
        return out

    new = {}
    for name in ("a11", "a12", "a1"):
        acc = np.zeros_like(getattr(field, name))
        for si, wi in zip(s, w):
            acc += wi * sample(name, field.x1 - si)
        new[name] = acc
    # convolving along x1 cannot move the wall rows of a12 off zero;
    # clamp the rounding dust so the output passes the wall invariant
    new["a12"][:, 0] = 0.0
    new["a12"][:, -1] = 0.0

    meta = dict(field.meta)
    meta["tau"] = tau
    return KeldyshField(field.x1, field.x2, new["a11"], new["a12"],
                        new["a1"], m=field.m, meta=meta)
