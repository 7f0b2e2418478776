"""One-dimensional accelerating transonic flow with a self-consistent field.

The steady 1D momentum/Poisson system reduces, on the accelerating branch,
to the scalar ODE  u' = F(u)  together with  E = sgn(u - u_s) sqrt(2 H(u)),
where H is the potential

    H(u) = int_{u_s}^{u} (J / (u_inf t^{gamma+1}))
           (t^{gamma+1} - u_s^{gamma+1}) (u_inf - t) dt,

and the pair (u, E) conserves the Hamiltonian  h = E^2/2 - H(u)  exactly.

The public entry points are:

* :func:`eval_H` / :func:`hamiltonian` -- potential and conserved quantity
  (quadrature-backed; the closed-form antiderivative is used internally on
  hot paths and cross-checked in the test suite),
* :func:`eval_F` -- the right-hand side u' = F(u), with a series
  regularization across the sonic point u_s,
* :func:`find_umax` -- terminal velocity (root of H above u_inf),
* :func:`integrate_background` -- the sampled trajectory as a
  :class:`BackgroundState`,
* :func:`kappa_functions` / :func:`nozzle_length` -- the rescaled
  kappa = u/u_s machinery and the length/lambda functionals built on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import brentq

from .errors import (ConvergenceError, DomainError, ExtentError, NoRootError,
                     OutsideTrajectoryError)
from .params import PhysicalParams

# Width of the series window around the sonic point, relative to u_s for F
# and absolute in kappa for calH.  Keeps the cubic-truncation jump at the
# switch below 1e-9.
DELTA_SW_REL = 1e-4
DELTA_SW_KAPPA = 1e-4

_EPS_H = 1e-12          # tolerance for "H(t) >= 0" membership tests
_HAMILTONIAN_TOL = 1e-8  # max node-wise |E^2/2 - H(u)| on a trajectory


# ---------------------------------------------------------------------------
# potential H and its derivatives (closed forms)

def _taylor_anti(monomials, u0: float, delta: float) -> float:
    """Taylor value of int_{u0}^{u0+delta} sum c t^p dt.

    ``monomials`` is a list of (c, p) pairs describing the integrand.  Used
    near the double zero of H (and calF), where evaluating the elementary
    antiderivative as a difference of O(1) terms loses all significant
    digits.  Converges geometrically for |delta| < u0.
    """
    total = 0.0
    # falling-factorial coefficients of the j-th integrand derivative at u0
    coefs = [(c, p) for c, p in monomials]
    for j in range(120):
        g_j = sum(c * u0 ** p for c, p in coefs)
        term = g_j * delta ** (j + 1) / math.factorial(j + 1)
        total += term
        if abs(term) <= 1e-18 * max(abs(total), 1e-30) and j > 3:
            break
        coefs = [(c * p, p - 1.0) for c, p in coefs]
    return total


def _H_monomials(p: PhysicalParams):
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)
    scale = p.J / p.u_inf
    return [(scale * p.u_inf, 0.0), (-scale, 1.0),
            (-scale * a * p.u_inf, -(g + 1.0)), (scale * a, -g)]


def _H_closed(p: PhysicalParams, u: float) -> float:
    """Elementary antiderivative of the H-integrand, evaluated u_s -> u."""
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)
    if abs(u - p.u_s) < 0.05 * p.u_s:
        return _taylor_anti(_H_monomials(p), p.u_s, u - p.u_s)

    def anti(t):
        return (p.u_inf * t - 0.5 * t * t
                + (a * p.u_inf / g) * t ** (-g)
                + (a / (1.0 - g)) * t ** (1.0 - g))

    return (p.J / p.u_inf) * (anti(u) - anti(p.u_s))


def _H_prime(p: PhysicalParams, u: float) -> float:
    a = p.u_s ** (p.gamma + 1.0)
    return (p.J / p.u_inf) * (1.0 - a * u ** (-(p.gamma + 1.0))) * (p.u_inf - u)


def _H_d2(p: PhysicalParams, u: float) -> float:
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)
    return (p.J / p.u_inf) * (-1.0 + (g + 1.0) * a * p.u_inf * u ** (-(g + 2.0))
                              - g * a * u ** (-(g + 1.0)))


def _H_d3(p: PhysicalParams, u: float) -> float:
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)
    return (p.J / p.u_inf) * (-(g + 1.0) * (g + 2.0) * a * p.u_inf * u ** (-(g + 3.0))
                              + g * (g + 1.0) * a * u ** (-(g + 2.0)))


def _H_d4(p: PhysicalParams, u: float) -> float:
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)
    return (p.J / p.u_inf) * ((g + 1.0) * (g + 2.0) * (g + 3.0) * a * p.u_inf * u ** (-(g + 4.0))
                              - g * (g + 1.0) * (g + 2.0) * a * u ** (-(g + 3.0)))


def eval_H(params: PhysicalParams, u: float) -> float:
    """Potential H(u), by adaptive quadrature from the sonic point.

    Absolute error is kept below 1e-12 * max(1, |H|).
    """
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    p = params
    g, a = p.gamma, p.u_s ** (p.gamma + 1.0)

    def integrand(t):
        return (p.J / (p.u_inf * t ** (g + 1.0))) * (t ** (g + 1.0) - a) * (p.u_inf - t)

    import warnings
    with warnings.catch_warnings():
        # near the roots of H the requested epsabs sits at the rounding
        # floor; the value itself is fine
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(integrand, p.u_s, u, epsabs=1e-13, epsrel=1e-13,
                        limit=200)
    return val


def hamiltonian(params: PhysicalParams, u: float, E: float) -> float:
    """Conserved quantity E^2/2 - H(u) along the trajectory."""
    return 0.5 * E * E - eval_H(params, u)


def sonic_F(params: PhysicalParams) -> float:
    """Exact value of F at the sonic point u_s."""
    p = params
    return math.sqrt((p.J / (p.gamma + 1.0)) * (1.0 / p.u_s - 1.0 / p.u_inf))


def eval_F(params: PhysicalParams, t: float) -> float:
    """Right-hand side of u' = F(u) on the accelerating branch.

    Away from u_s this is  t^gamma sqrt(2 H(t)) / |t^(gamma+1) - u_s^(gamma+1)|;
    within |t - u_s| < 1e-4 u_s the 0/0 quotient is replaced by the Taylor
    quotient built from H''(u_s), H'''(u_s), H''''(u_s).  Continuous across
    the switch with jump below 1e-9.
    """
    p = params
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    g, us = p.gamma, p.u_s
    delta = t - us
    if abs(delta) >= DELTA_SW_REL * us:
        H = _H_closed(p, t)
        if H < -_EPS_H * max(1.0, abs(_H_d2(p, us)) * delta * delta):
            raise OutsideTrajectoryError(
                f"H({t}) = {H} < 0: state off the accelerating trajectory")
        return t ** g * math.sqrt(2.0 * max(H, 0.0)) / abs(t ** (g + 1.0) - us ** (g + 1.0))
    # series window: 2H = H2 d^2 (1 + c1 d + c2 d^2), denom = (g+1) us^g d (1 + d1 d + d2 d^2)
    H2 = _H_d2(p, us)
    c1 = _H_d3(p, us) / (3.0 * H2)
    c2 = _H_d4(p, us) / (12.0 * H2)
    d1 = g / (2.0 * us)
    d2 = g * (g - 1.0) / (6.0 * us * us)
    num = math.sqrt(max(1.0 + c1 * delta + c2 * delta * delta, 0.0))
    den = 1.0 + d1 * delta + d2 * delta * delta
    return t ** g * math.sqrt(H2) * num / ((g + 1.0) * us ** g * den)


def find_umax(params: PhysicalParams) -> float:
    """Unique root of H on (u_inf, inf), bracketing-certified.

    The returned value satisfies |H(u_max)| <= 1e-12 * max(1, s) for the
    natural slope scale s = |H'(u_max)| u_s of the potential.
    """
    p = params
    lo = p.u_inf
    hi = 2.0 * p.u_inf
    while _H_closed(p, hi) > 0.0:
        hi *= 2.0
        if hi > 1e6 * p.u_inf:
            raise NoRootError("H has no root below 1e6 * u_inf")
    root = brentq(lambda u: _H_closed(p, u), lo, hi, xtol=1e-15, rtol=8.9e-16)
    scale = max(1.0, abs(_H_prime(p, root)) * p.u_s)
    # polish: one or two Newton steps push |H| to the rounding floor
    for _ in range(3):
        h = _H_closed(p, root)
        if abs(h) <= 1e-13 * scale:
            break
        root -= h / _H_prime(p, root)
    if abs(_H_closed(p, root)) > 1e-12 * scale:  # pragma: no cover
        raise NoRootError("root polishing failed to reach |H| <= 1e-12")
    return root


# ---------------------------------------------------------------------------
# trajectory integration

@dataclass(frozen=True)
class BackgroundState:
    """Sampled accelerating trajectory (u1, E, rho, Phi) on [0, x1_max].

    Carries the dense ODE interpolant so downstream consumers can evaluate
    the fields (and their exact derivatives through u' = F(u)) off-grid.
    """
    params: PhysicalParams
    x1_grid: np.ndarray
    u1: np.ndarray
    E: np.ndarray
    rho: np.ndarray
    Phi: np.ndarray
    ell_s: float
    l_max: float
    u_max: float
    max_h_residual: float
    _dense: Callable = field(repr=False, compare=False)

    # -- pointwise evaluation -------------------------------------------
    def u1_of(self, x1):
        return self._dense(np.asarray(x1))[0]

    def E_of(self, x1):
        return self._dense(np.asarray(x1))[1]

    def Phi_of(self, x1):
        return self._dense(np.asarray(x1))[2]

    def rho_of(self, x1):
        return self.params.J / self.u1_of(x1)

    def u1_prime_of(self, x1):
        u = np.asarray(self.u1_of(x1))
        return np.vectorize(lambda t: eval_F(self.params, float(t)))(u)

    def rho_prime_of(self, x1):
        u = self.u1_of(x1)
        return -self.params.J * self.u1_prime_of(x1) / (np.asarray(u) ** 2)

    @property
    def L(self) -> float:
        return float(self.x1_grid[-1])


def _l_max(params: PhysicalParams, u0: float, u_max: float) -> float:
    """Length needed for u to climb from u0 to u_max - 1e-10 u_s."""
    p = params
    target = u_max - 1e-10 * p.u_s
    if u0 >= target:
        return 0.0

    def rhs(x, y):
        # trial RK stages may overshoot u_max by rounding; F vanishes there
        return [eval_F(p, min(y[0], u_max))]

    def hit(x, y):
        return y[0] - target
    hit.terminal = True
    hit.direction = 1.0

    T = max(1.0, p.u_s / sonic_F(p))
    for _ in range(60):
        sol = solve_ivp(rhs, (0.0, T), [u0], method="DOP853",
                        rtol=1e-12, atol=1e-14, events=hit, dense_output=False)
        if sol.t_events[0].size:
            return float(sol.t_events[0][0])
        T *= 2.0
    raise NoRootError("trajectory never reached u_max (bad parameters?)")


def integrate_background(params: PhysicalParams, u0: float, x1_max: float,
                         nx: int) -> BackgroundState:
    """Integrate (u, E, Phi) along [0, x1_max] from the inlet velocity u0.

    The inlet datum lies on the accelerating branch: E(0) has the sign of
    u0 - u_s with E(0)^2 = 2 H(u0), and Phi(0) closes the Bernoulli law at
    the inlet.  Phi is accumulated through the same integrator stages as u.
    """
    p = params
    u_max = find_umax(p)
    if not 0 < u0 < u_max:
        raise DomainError(f"u0 must lie in (0, u_max={u_max}), got {u0}")
    if nx < 2:
        raise DomainError("nx must be at least 2")
    l_max = _l_max(p, u0, u_max)
    if x1_max > l_max:
        raise ExtentError(
            f"x1_max={x1_max} exceeds maximal existence length {l_max}", l_max)

    E0 = math.copysign(math.sqrt(2.0 * max(_H_closed(p, u0), 0.0)), u0 - p.u_s)
    if u0 == p.u_s:
        E0 = 0.0
    Phi0 = 0.5 * u0 * u0 + (p.gamma * p.S0 / (p.gamma - 1.0)) * (p.J / u0) ** (p.gamma - 1.0)

    def rhs(x, y):
        u = min(y[0], u_max)
        return [eval_F(p, u), p.J / u - p.rho_inf, y[1]]

    grid = np.linspace(0.0, x1_max, nx)
    sol = solve_ivp(rhs, (0.0, x1_max), [u0, E0, Phi0], method="DOP853",
                    rtol=1e-12, atol=1e-14, t_eval=grid, dense_output=True)
    if not sol.success:  # pragma: no cover
        raise ConvergenceError(f"trajectory integration failed: {sol.message}")

    u1, E, Phi = sol.y
    rho = p.J / u1

    # sonic location from the dense interpolant
    if u0 == p.u_s:
        ell_s = 0.0
    elif (u1[0] - p.u_s) * (u1[-1] - p.u_s) < 0:
        ell_s = brentq(lambda x: sol.sol(x)[0] - p.u_s, 0.0, x1_max,
                       xtol=1e-15, rtol=8.9e-16)
    else:
        ell_s = math.nan

    h_res = np.abs(0.5 * E * E - np.array([_H_closed(p, u) for u in u1]))
    max_h = float(h_res.max())
    if max_h > _HAMILTONIAN_TOL:  # pragma: no cover
        raise ConvergenceError(
            f"Hamiltonian residual {max_h} exceeds {_HAMILTONIAN_TOL}")
    if np.any(np.diff(u1) <= 0):  # pragma: no cover
        raise ConvergenceError("u1 failed to be strictly increasing")

    return BackgroundState(params=p, x1_grid=grid, u1=u1, E=E, rho=rho,
                           Phi=Phi, ell_s=ell_s, l_max=l_max, u_max=u_max,
                           max_h_residual=max_h, _dense=sol.sol)


# ---------------------------------------------------------------------------
# kappa machinery

def _calF_closed(p: PhysicalParams, kappa: float) -> float:
    g, z = p.gamma, p.zeta0
    if abs(kappa - 1.0) < 0.05:
        mono = [(1.0, 0.0), (-1.0 / z, 1.0), (-1.0, -(g + 1.0)), (1.0 / z, -g)]
        return _taylor_anti(mono, 1.0, kappa - 1.0)

    def anti(t):
        return (t - t * t / (2.0 * z) + t ** (-g) / g
                + t ** (1.0 - g) / ((1.0 - g) * z))

    return anti(kappa) - anti(1.0)


def _calF_derivs_at_1(p: PhysicalParams):
    g, z = p.gamma, p.zeta0
    F2 = (g + 1.0) * (1.0 - 1.0 / z)
    F3 = -2.0 * (g + 1.0) / z - (1.0 - 1.0 / z) * (g + 1.0) * (g + 2.0)
    F4 = (g + 1.0) * (g + 2.0) * (3.0 / z + (1.0 - 1.0 / z) * (g + 3.0))
    return F2, F3, F4


def kappa_functions(params: PhysicalParams, kappa: float):
    """(calF, calH) at the rescaled velocity kappa = u1 / u_s.

    calF uses its elementary antiderivative; calH is the 0/0-regularized
    quotient |kappa^(gamma-1) sqrt(calF) / (kappa^(gamma+1) - 1)| with
    calH(1) = sqrt(1 - 1/zeta0) / sqrt(2 (gamma+1)).
    """
    p = params
    if not kappa > 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    g = p.gamma
    calF = _calF_closed(p, kappa)
    if calF < -1e-13 * max(1.0, abs(kappa)):
        raise OutsideTrajectoryError(f"calF({kappa}) = {calF} < 0")
    calF = max(calF, 0.0)
    delta = kappa - 1.0
    if abs(delta) >= DELTA_SW_KAPPA:
        calH = abs(kappa ** (g - 1.0) * math.sqrt(calF) / (kappa ** (g + 1.0) - 1.0))
    else:
        F2, F3, F4 = _calF_derivs_at_1(p)
        e1, e2 = F3 / (3.0 * F2), F4 / (12.0 * F2)
        d1, d2 = g / 2.0, g * (g - 1.0) / 6.0
        num = math.sqrt(max(1.0 + e1 * delta + e2 * delta * delta, 0.0))
        den = 1.0 + d1 * delta + d2 * delta * delta
        calH = kappa ** (g - 1.0) * math.sqrt(F2 / 2.0) * num / ((g + 1.0) * den)
    return calF, calH


def nozzle_length(params: PhysicalParams, kappa0: float, kappaL: float,
                  with_lambda: bool = False):
    """Nozzle length between the sections where u1/u_s equals kappa0, kappaL.

    L = sqrt(h0^3 / 2) J^((gamma-2)/(gamma+1)) * int dkappa / (kappa calH).
    With ``with_lambda=True`` also returns lambda = (int dkappa/(kappa calH))^2.
    """
    p = params
    if not 0 < kappa0 <= kappaL:
        raise DomainError(f"need 0 < kappa0 <= kappaL, got ({kappa0}, {kappaL})")
    u_max = find_umax(p)
    if kappaL > u_max / p.u_s * (1.0 + 1e-12):
        raise DomainError(f"kappaL={kappaL} beyond trajectory end {u_max / p.u_s}")
    if kappa0 == kappaL:
        return (0.0, 0.0) if with_lambda else 0.0

    def integrand(k):
        _, calH = kappa_functions(p, k)
        return 1.0 / (k * calH)

    pts = [1.0] if kappa0 < 1.0 < kappaL else None
    I, err = quad(integrand, kappa0, kappaL, epsabs=1e-12, epsrel=1e-12,
                  limit=200, points=pts)
    L = math.sqrt(p.h0 ** 3 / 2.0) * p.J ** ((p.gamma - 2.0) / (p.gamma + 1.0)) * I
    if with_lambda:
        return L, I * I
    return L
