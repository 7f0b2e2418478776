"""Entropy transport along a divergence-free pseudo momentum field.

The field ``m`` carries the flux of the flow; its stream function

    theta(x1, x2) = integral_{-1}^{x2} m(x1, t) . e1 dt

is constant along streamlines, so the level-set relation
``theta(0, L(x)) = theta(x)`` defines a Lagrangian mapping ``L`` back to
the inlet, and the transported entropy perturbation is the inlet profile
composed with ``L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .errors import (AdmissibilityError, DomainError,
                     QuadratureInconsistencyError)

_ROOT_TOL = 1e-12          # |theta(0, y) - target| at a certified map value


@dataclass(frozen=True)
class TransportField:
    """Pseudo momentum field and its stream function on the grid.

    ``theta_bar`` is the total flux theta(x1, 1); for a divergence-free
    field with impermeable walls it is independent of x1, and
    ``flux_drift`` records the measured sup deviation.  ``div_sup`` is
    the sup norm of the centered discrete divergence of m.
    """
    x1: np.ndarray
    x2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    theta: np.ndarray
    theta_bar: float
    flux_drift: float
    div_sup: float
    J: float


@dataclass(frozen=True)
class LagrangianMap:
    """Sampled inlet pull-back L(x1, x2) in [-1, 1].

    ``L`` maps each grid point to the inlet height of its streamline;
    it is the identity on the inlet column and fixes the walls.
    """
    x1: np.ndarray
    x2: np.ndarray
    L: np.ndarray
    theta_inlet: CubicSpline = dc_field(repr=False, default=None)

    def __post_init__(self):
        if np.any(np.diff(self.L, axis=1) <= 0.0):
            raise DomainError("Lagrangian map is not strictly increasing "
                              "in x2")


def _as_grid(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 5:
        raise DomainError(f"{name} must be a 1-D grid with >= 5 nodes")
    if np.any(np.diff(x) <= 0):
        raise DomainError(f"{name} must be ascending")
    return x


def build_stream_function(x1, x2, m1, m2, J: float) -> TransportField:
    """Integrate the axial flux into the stream function theta.

    ``m1``/``m2`` are the field components on the tensor grid; the
    integration is composite Simpson along each x1 line.  The axial
    component must stay above J/2 everywhere, and the total flux
    theta(x1, 1) must be constant in x1 up to the quadrature budget.
    """
    x1 = _as_grid(x1, "x1")
    x2 = _as_grid(x2, "x2")
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if m1.shape != (x1.size, x2.size) or m2.shape != m1.shape:
        raise DomainError("m components must live on the tensor grid")
    if not J > 0:
        raise DomainError(f"J must be positive, got {J}")
    m1_min = float(np.min(m1))
    if m1_min < 0.5 * J:
        raise AdmissibilityError(
            f"min m.e1 = {m1_min} violates the transport floor J/2 = "
            f"{0.5 * J}")

    theta = cumulative_simpson(m1, x=x2, axis=1, initial=0.0)
    top = theta[:, -1]
    theta_bar = float(top[0])
    flux_drift = float(np.max(np.abs(top - theta_bar)))
    h = max(float(np.max(np.diff(x1))), float(np.max(np.diff(x2))))
    scale = float(np.max(np.abs(theta))) + 1e-30
    budget = 50.0 * h ** 2 * scale + 1e-12
    if flux_drift > budget:
        raise QuadratureInconsistencyError(
            f"total flux drifts by {flux_drift} along the nozzle, beyond "
            f"the divergence-defect budget {budget}")
    d1 = np.gradient(m1, x1, axis=0, edge_order=2)
    d2 = np.gradient(m2, x2, axis=1, edge_order=2)
    div_sup = float(np.max(np.abs(d1 + d2)))
    return TransportField(x1=x1, x2=x2, m1=m1, m2=m2, theta=theta,
                          theta_bar=theta_bar, flux_drift=flux_drift,
                          div_sup=div_sup, J=J)


def lagrangian_map(field: TransportField) -> LagrangianMap:
    """Invert theta(0, y) = theta(x1, x2) for the inlet height y.

    The inlet profile theta(0, .) is strictly increasing (axial flux
    >= J/2), so each root is unique; it is found by bisection plus
    Newton polishing on the inlet cubic spline to 1e-12.
    """
    x1, x2 = field.x1, field.x2
    inlet = CubicSpline(x2, field.theta[0, :])
    lo_val, hi_val = float(field.theta[0, 0]), float(field.theta[0, -1])
    span = hi_val - lo_val
    tol_out = 1e-8 * span
    targets = field.theta[1:, 1:-1]
    if float(np.min(targets)) < lo_val - tol_out \
            or float(np.max(targets)) > hi_val + tol_out:
        raise DomainError(
            f"stream values leave the inlet range [{lo_val}, {hi_val}]: "
            f"found [{float(np.min(targets))}, {float(np.max(targets))}]")
    targets = np.clip(targets, lo_val, hi_val)
    scale_root = _ROOT_TOL * max(1.0, abs(span))
    # vectorized bisection over all interior nodes at once (the inlet
    # profile is strictly increasing, so lo/hi always bracket)
    a = np.full_like(targets, -1.0)
    b = np.full_like(targets, 1.0)
    for _ in range(60):
        y = 0.5 * (a + b)
        low = inlet(y) < targets
        a = np.where(low, y, a)
        b = np.where(low, b, y)
    y = 0.5 * (a + b)
    for _ in range(4):               # vectorized Newton polishing
        fy = inlet(y) - targets
        dy = inlet(y, 1)
        step = np.where(dy > 0.0, fy / np.where(dy > 0.0, dy, 1.0), 0.0)
        y = np.clip(y - step, -1.0, 1.0)
    if float(np.max(np.abs(inlet(y) - targets))) > scale_root:
        raise DomainError("Lagrangian map root polishing stalled")
    L = np.empty_like(field.theta)
    L[0, :] = x2                    # identity on the inlet, node-exact
    L[:, 0] = -1.0                  # walls are streamlines
    L[:, -1] = 1.0
    L[1:, 1:-1] = y
    return LagrangianMap(x1=x1, x2=x2, L=L, theta_inlet=inlet)


def transport_entropy(lmap: LagrangianMap, S_en, S0: float) -> np.ndarray:
    """Pull the inlet entropy profile back along the streamlines.

    ``S_en`` is either a callable on [-1, 1] or an array sampled on the
    map's x2 grid; it must have zero slope at the walls (the inlet
    profile's odd derivatives vanish there so that the transported field
    is smooth across the wall streamlines).  Returns T = (S_en - S0)
    composed with the map, node-exact on the inlet column.
    """
    x2 = lmap.x2
    if callable(S_en):
        samples = np.asarray([float(S_en(t)) for t in x2])
    else:
        samples = np.asarray(S_en, dtype=float)
        if samples.shape != x2.shape:
            raise DomainError("S_en samples must match the x2 grid")
    dev = samples - S0
    spline = CubicSpline(x2, dev)    # not-a-knot
    scale = float(np.max(np.abs(dev))) + 1e-30
    h2 = float(np.max(np.diff(x2)))
    wall_slope = max(abs(float(spline(-1.0, 1))), abs(float(spline(1.0, 1))))
    if wall_slope > 50.0 * h2 ** 2 * scale + 1e-10 * scale:
        raise AdmissibilityError(
            f"inlet entropy profile has wall slope {wall_slope}; the "
            "compatibility conditions require odd derivatives to vanish "
            "at the walls")
    T = spline(lmap.L)
    T[0, :] = dev                    # inlet consistency, node-exact
    return T


def transport_residual(field: TransportField, T) -> float:
    """Grid L2 norm of the advection residual m . grad T."""
    T = np.asarray(T, dtype=float)
    if T.shape != field.theta.shape:
        raise DomainError("T must live on the transport grid")
    d1 = np.gradient(T, field.x1, axis=0, edge_order=2)
    d2 = np.gradient(T, field.x2, axis=1, edge_order=2)
    r = field.m1 * d1 + field.m2 * d2
    return math.sqrt(float(np.trapezoid(
        np.trapezoid(r ** 2, field.x2, axis=1), field.x1)))
