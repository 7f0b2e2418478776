"""Spectral Galerkin solver for the degenerate second-order problem.

The field equation  a11 d11 v + 2 a12 d12 v + d22 v + a1 d1 v = f  on the
rectangle (0, R) x (-1, 1) is solved constructively:

1. expand in Neumann cosine eigenfunctions of x2,
2. regularise with a small third-derivative term  eps d111 v,
3. solve the resulting linear two-point BVP for the mode amplitudes by a
   global second-order box scheme and one sparse solve,
4. drive (eps, tau, n) -> (0, 0, inf) by geometric continuation, where tau
   is the coefficient-mollification width, and stop once successive
   synthesised fields agree in the discrete H1 norm.

The continuation runs on the extended, eventually-elliptic coefficient
field produced by :func:`transonic.coefficients.extend_coefficients` and
restricts the answer back to the original rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.sparse.linalg import splu

from .coefficients import (KeldyshField, check_kz_condition,
                           extend_coefficients, mollify_coefficients)
from .errors import ConvergenceError, DomainError, SingularSystemError

__all__ = [
    "SpectralBasis", "GalerkinOdeSystem", "GalerkinSolution",
    "project_coefficients", "solve_viscous_galerkin", "continuation_solve",
    "weak_form_residual", "h1_norm", "l2_norm",
]

_trapz = getattr(np, "trapezoid", np.trapz)


# ---------------------------------------------------------------------------
# basis

class SpectralBasis:
    """Orthonormal Neumann cosine basis on [-1, 1].

    Mode k has eigenvalue lambda_k = (k pi / 2)^2 and eigenfunction
    proportional to cos(k pi (x2 + 1) / 2); mode 0 is the constant.
    """

    def __init__(self, n: int):
        if n < 1:
            raise DomainError("mode count must be at least 1")
        self.n = int(n)
        k = np.arange(self.n)
        self.eigenvalues = (k * np.pi / 2.0) ** 2

    def eval(self, x2) -> np.ndarray:
        """Matrix of basis values, shape (n, len(x2))."""
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        k = np.arange(self.n)[:, None]
        E = np.cos(k * np.pi * (x2[None, :] + 1.0) / 2.0)
        E[0] = 1.0 / np.sqrt(2.0)
        return E

    def eval_deriv(self, x2) -> np.ndarray:
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        k = np.arange(self.n)[:, None]
        w = k * np.pi / 2.0
        return -w * np.sin(k * np.pi * (x2[None, :] + 1.0) / 2.0)

    def synthesize(self, theta: np.ndarray, x2) -> np.ndarray:
        """Sum theta_k eta_k(x2); theta has modes on its last axis."""
        return np.asarray(theta, dtype=float) @ self.eval(x2)


# ---------------------------------------------------------------------------
# mode projections

def _quad_rule(n: int):
    q = max(4 * (n + 1), 24)
    return np.polynomial.legendre.leggauss(q)


def project_coefficients(field: KeldyshField, basis: SpectralBasis, x1,
                         f=None):
    """Mode-space coefficient matrices at station(s) x1.

    Returns (a11jk, a12jk, a1jk, fk) where a11jk and a1jk pair eta_j with
    eta_k, while a12jk pairs eta_j' with eta_k.  ``f``, if given, is a
    callable f(x1, x2) whose projections fill fk; otherwise fk is zero.
    """
    x1a = np.atleast_1d(np.asarray(x1, dtype=float))
    if np.any(x1a < field.x1[0] - 1e-12) or np.any(x1a > field.R + 1e-12):
        raise DomainError("x1 outside the coefficient field")
    t, w = _quad_rule(basis.n)
    E, Ep = basis.eval(t), basis.eval_deriv(t)
    Ew = E * w
    a11 = field.at("a11", x1a, t, grid=True)
    a12 = field.at("a12", x1a, t, grid=True)
    a1 = field.at("a1", x1a, t, grid=True)
    a11jk = np.einsum("xq,jq,kq->xjk", a11, E, Ew)
    a12jk = np.einsum("xq,jq,kq->xjk", a12, Ep, Ew)
    a1jk = np.einsum("xq,jq,kq->xjk", a1, E, Ew)
    if f is None:
        fk = np.zeros((x1a.size, basis.n))
    else:
        X1, X2 = np.meshgrid(x1a, t, indexing="ij")
        fk = np.einsum("xq,kq->xk", np.asarray(f(X1, X2), dtype=float), Ew)
    if np.isscalar(x1) or np.ndim(x1) == 0:
        return a11jk[0], a12jk[0], a1jk[0], fk[0]
    return a11jk, a12jk, a1jk, fk


# ---------------------------------------------------------------------------
# the viscous mode ODE system

@dataclass(frozen=True)
class GalerkinOdeSystem:
    """First-order form of the regularised mode equations.

    d/dx1 Theta'' = (1/eps)(A1 Theta + A2 Theta' + A3 Theta'' + F) with
    A1 = diag(lambda_k), A2 = -[2 a12^{jk} + a1^{jk}], A3 = -[a11^{jk}],
    stored per x1 node (A2, A3 of shape (N, n, n), F of shape (N, n)).
    """
    x1: np.ndarray
    lam: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    F: np.ndarray
    epsilon: float

    def __post_init__(self):
        N, n = self.F.shape
        if self.x1.shape != (N,) or self.lam.shape != (n,):
            raise DomainError("inconsistent system shapes")
        if self.A2.shape != (N, n, n) or self.A3.shape != (N, n, n):
            raise DomainError("inconsistent system shapes")
        for arr in (self.x1, self.lam, self.A2, self.A3, self.F):
            if not np.all(np.isfinite(arr)):
                raise DomainError("non-finite system data")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")

    @property
    def n(self) -> int:
        return self.F.shape[1]


def system_from_field(field: KeldyshField, basis: SpectralBasis,
                      x1: np.ndarray, epsilon: float,
                      f=None) -> GalerkinOdeSystem:
    """Assemble the mode system from a coefficient field and forcing."""
    a11jk, a12jk, a1jk, fk = project_coefficients(field, basis, x1, f=f)
    # equations are indexed by the test mode k: transpose the (j, k) pairings
    A2 = -np.swapaxes(2.0 * a12jk + a1jk, 1, 2)
    A3 = -np.swapaxes(a11jk, 1, 2)
    return GalerkinOdeSystem(np.asarray(x1, dtype=float), basis.eigenvalues,
                             A2, A3, fk, float(epsilon))


@dataclass(frozen=True)
class GalerkinSolution:
    """Mode amplitudes with first and second derivatives on the nodes."""
    x1: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    d2theta: np.ndarray
    epsilon: float
    tau: float
    n: int
    basis: SpectralBasis
    diagnostics: dict = dfield(default_factory=dict)

    def synthesize(self, x1, x2, deriv: int = 0) -> np.ndarray:
        """Field value (deriv=0), d1 (1) or d11 (2) on a tensor grid."""
        amp = (self.theta, self.dtheta, self.d2theta)[deriv]
        vals = CubicSpline(self.x1, amp, axis=0)(np.asarray(x1, dtype=float))
        return self.basis.synthesize(vals, x2)


def solve_viscous_galerkin(system: GalerkinOdeSystem) -> GalerkinSolution:
    """Solve the two-point BVP for X = (Theta, Theta', Theta'').

    Second-order box scheme: midpoint collocation of the first-order form
    on every interval plus the split boundary rows Theta(0) = Theta'(0) = 0
    and Theta''(R_*) = 0, assembled into one banded sparse system.
    """
    x1, eps, n = system.x1, system.epsilon, system.n
    N = x1.size
    if N < 3:
        raise DomainError("need at least 3 nodes")
    h = np.diff(x1)
    if np.any(h <= 0):
        raise DomainError("x1 nodes must increase")

    def gidx(i, comp, k):
        return 3 * n * i + comp * n + k

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v).ravel())

    i = np.arange(N - 1)
    k = np.arange(n)
    I, K = np.meshgrid(i, k, indexing="ij")
    H = h[I]
    # chain rows: trapezoidal updates of Theta and Theta'
    for c in (0, 1):
        r = gidx(I, c, K)
        add(r, gidx(I + 1, c, K), 1.0 / H)
        add(r, gidx(I, c, K), -1.0 / H)
        add(r, gidx(I, c + 1, K), -0.5 * np.ones_like(H))
        add(r, gidx(I + 1, c + 1, K), -0.5 * np.ones_like(H))
    # collocation rows: eps (Theta''_{i+1} - Theta''_i)/h - midpoint source
    r = gidx(I, 2, K)
    add(r, gidx(I, 2, K), -eps / H)
    add(r, gidx(I + 1, 2, K), eps / H)
    add(r, gidx(I, 0, K), -0.5 * system.lam[K])
    add(r, gidx(I + 1, 0, K), -0.5 * system.lam[K])
    J = np.arange(n)
    Ib, Kb, Jb = np.meshgrid(i, k, J, indexing="ij")
    rb = gidx(Ib, 2, Kb)
    add(rb, gidx(Ib, 1, Jb), -0.5 * system.A2[:-1][Ib, Kb, Jb])
    add(rb, gidx(Ib + 1, 1, Jb), -0.5 * system.A2[1:][Ib, Kb, Jb])
    add(rb, gidx(Ib, 2, Jb), -0.5 * system.A3[:-1][Ib, Kb, Jb])
    add(rb, gidx(Ib + 1, 2, Jb), -0.5 * system.A3[1:][Ib, Kb, Jb])
    # boundary rows
    base = 3 * n * (N - 1)
    add(base + k, gidx(0, 0, k), np.ones(n))
    add(base + n + k, gidx(0, 1, k), np.ones(n))
    add(base + 2 * n + k, gidx(N - 1, 2, k), np.ones(n))

    size = 3 * n * N
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size)).tocsc()
    b = np.zeros(size)
    Fm = 0.5 * (system.F[:-1] + system.F[1:])
    b[gidx(I, 2, K).ravel()] = Fm.ravel()

    try:
        lu = splu(A)
        X = lu.solve(b)
    except RuntimeError as exc:
        raise SingularSystemError(
            f"singular mode system ({exc}); epsilon may be too small for "
            "the grid or the structure condition fails") from exc
    scale = 1.0 + float(np.max(np.abs(b)))
    residual = float(np.max(np.abs(A @ X - b))) / scale
    if not residual <= 1e-8:
        normA = float(abs(A).sum(axis=1).max())
        inv_norm = float(np.max(np.abs(lu.solve(np.sign(X)))))
        raise SingularSystemError(
            f"mode system residual {residual:.3e} exceeds 1e-8",
            condition=normA * inv_norm)

    X = X.reshape(N, 3, n)
    # pin the boundary rows node-exact (they hold to roundoff already)
    X[0, 0] = 0.0
    X[0, 1] = 0.0
    X[N - 1, 2] = 0.0
    basis = SpectralBasis(n)
    return GalerkinSolution(x1, X[:, 0], X[:, 1], X[:, 2], eps,
                            float("nan"), n, basis,
                            {"residual": residual})


# ---------------------------------------------------------------------------
# discrete norms

def _grid_quad2(F: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> float:
    return float(_trapz(_trapz(F, x2, axis=1), x1))


def l2_norm(v: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> float:
    return np.sqrt(_grid_quad2(np.asarray(v) ** 2, x1, x2))


def h1_norm(v: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> float:
    """Trapezoid-rule H1 norm on a tensor grid."""
    v = np.asarray(v, dtype=float)
    g1 = np.gradient(v, x1, axis=0)
    g2 = np.gradient(v, x2, axis=1)
    return np.sqrt(_grid_quad2(v * v + g1 * g1 + g2 * g2, x1, x2))


# ---------------------------------------------------------------------------
# continuation

def _default_schedule():
    stages = 14
    return {"eps_list": [0.1 * 2.0 ** -k for k in range(stages)],
            "tau_list": [0.2 * 2.0 ** -k for k in range(stages)],
            "n_list": [8] * (stages // 2) + [16] * (stages - stages // 2)}


def _pad(seq, length):
    seq = list(seq)
    return seq + [seq[-1]] * (length - len(seq))


def _forcing_eval(field: KeldyshField, f):
    """Forcing as a callable on the extended strip.

    A callable is trusted everywhere; a grid array is splined on the
    original rectangle and reflected evenly past x1 = R.
    """
    if callable(f):
        return f
    arr = np.asarray(f, dtype=float)
    if arr.shape != (field.x1.size, field.x2.size):
        raise DomainError("forcing array must live on the field grid")
    sp = RectBivariateSpline(field.x1, field.x2, arr, kx=3, ky=3)
    R = field.R

    def f_ext(X1, X2):
        X1r = R - np.abs(np.asarray(X1, dtype=float) - R)
        return sp.ev(X1r, X2)

    return f_ext


def _check_wall_compat(f_eval, field: KeldyshField):
    x1s = np.linspace(0.0, field.R, 21)
    d = 1e-5
    for wall in (-1.0, 1.0):
        inner = wall - np.sign(wall) * d
        slope = np.abs(f_eval(x1s, np.full_like(x1s, inner))
                       - f_eval(x1s, np.full_like(x1s, wall))) / d
        scale = 1.0 + float(np.max(np.abs(f_eval(x1s, np.zeros_like(x1s)))))
        if np.max(slope) > 1e-4 * scale:
            raise DomainError("forcing must have zero normal derivative "
                              "on the walls")


def continuation_solve(field: KeldyshField, f, schedule: dict | None = None,
                       tol: float = 1e-6,
                       n_nodes: int = 801,
                       extend: bool = True,
                       strict: bool = True) -> GalerkinSolution:
    """Drive (eps, tau, n) to convergence on the (extended) field.

    Stops when two successive synthesised fields differ by less than
    ``tol`` in discrete H1 on the original rectangle; reports per-stage
    diagnostics including sqrt(eps) ||d11 v|| and the measured stability
    ratio C = (sqrt(eps) ||d11 v|| + ||v||_H1) / ||f||_L2.

    With ``extend=False`` the viscous problem is posed on the original
    rectangle itself, with the relaxed exit condition d11 v = 0 at
    x1 = R, and the coefficients are used as given (no mollification).
    This is the mode for coefficient fields whose x1-slope is too steep
    for an even-reflection extension to keep the structure margin (the
    caller must guarantee solvability, e.g. through an energy multiplier
    argument).

    With ``strict=False`` an exhausted schedule returns the last stage
    instead of raising; this makes a fixed schedule act as a
    deterministic linear solve, which is what an outer alternating
    iteration needs (its update residuals cancel the stage bias).
    """
    ok, _lam = check_kz_condition(field)
    if not ok:
        raise DomainError("coefficient field violates the structure "
                          "condition")
    f_eval = _forcing_eval(field, f)
    _check_wall_compat(f_eval, field)
    if extend:
        ext = extend_coefficients(field)
        R_star = ext.meta["R_star"]
    else:
        ext = field
        R_star = field.R
    sched = dict(_default_schedule() if schedule is None else schedule)
    stages = max(len(sched["eps_list"]), len(sched["tau_list"]),
                 len(sched["n_list"]))
    eps_list = _pad(sched["eps_list"], stages)
    tau_list = _pad(sched["tau_list"], stages)
    n_list = _pad(sched["n_list"], stages)

    x1 = np.linspace(0.0, R_star, n_nodes)
    x1_om = field.x1
    x2_om = field.x2
    fnorm = l2_norm(f_eval(*np.meshgrid(x1_om, x2_om, indexing="ij")),
                    x1_om, x2_om)
    prev = None
    gaps, stage_diags = [], []
    sol = None
    for eps, tau, n in zip(eps_list, tau_list, n_list):
        mol = mollify_coefficients(ext, tau) if extend else ext
        basis = SpectralBasis(n)
        system = system_from_field(mol, basis, x1, eps, f=f_eval)
        raw = solve_viscous_galerkin(system)
        v = raw.synthesize(x1_om, x2_om)
        d11 = raw.synthesize(x1_om, x2_om, deriv=2)
        sqe = np.sqrt(eps) * l2_norm(d11, x1_om, x2_om)
        vH1 = h1_norm(v, x1_om, x2_om)
        diag = {"eps": eps, "tau": tau, "n": n,
                "sqrt_eps_d11": sqe, "v_h1": vH1,
                "C": (sqe + vH1) / fnorm if fnorm > 0 else 0.0,
                "residual": raw.diagnostics["residual"]}
        if prev is not None:
            gap = h1_norm(v - prev, x1_om, x2_om)
            gaps.append(gap)
            diag["h1_gap"] = gap
        stage_diags.append(diag)
        sol = GalerkinSolution(raw.x1, raw.theta, raw.dtheta, raw.d2theta,
                               eps, tau, n, basis,
                               {"stages": stage_diags,
                                "residual": raw.diagnostics["residual"],
                                "R": field.R, "R_star": R_star})
        if prev is not None and gaps[-1] < tol:
            return sol
        prev = v
    if not strict:
        return sol
    raise ConvergenceError(
        f"continuation schedule exhausted; last H1 gaps {gaps[-2:]}",
        history=stage_diags)


# ---------------------------------------------------------------------------
# weak form

def weak_form_residual(field: KeldyshField, v: np.ndarray, f: np.ndarray,
                       test: np.ndarray) -> float:
    """Defect of the integrated-by-parts identity against one test field.

    The test function must vanish on the entrance and exit boundaries.
    All fields are arrays on the coefficient grid.
    """
    v = np.asarray(v, dtype=float)
    f = np.asarray(f, dtype=float)
    phi = np.asarray(test, dtype=float)
    shape = (field.x1.size, field.x2.size)
    if v.shape != shape or f.shape != shape or phi.shape != shape:
        raise DomainError("fields must live on the coefficient grid")
    scale = 1.0 + float(np.max(np.abs(phi)))
    if max(np.max(np.abs(phi[0])), np.max(np.abs(phi[-1]))) > 1e-12 * scale:
        raise DomainError("test function must vanish on entrance and exit")
    x1, x2 = field.x1, field.x2
    d1v = np.gradient(v, x1, axis=0)
    d2v = np.gradient(v, x2, axis=1)
    d1phi = np.gradient(phi, x1, axis=0)
    d2phi = np.gradient(phi, x2, axis=1)
    d1a11 = np.gradient(field.a11, x1, axis=0)
    d2a12 = np.gradient(field.a12, x2, axis=1)
    d1a12 = np.gradient(field.a12, x1, axis=0)
    integrand = (field.a11 * d1v * d1phi
                 + field.a12 * (d1v * d2phi + d2v * d1phi)
                 + d2v * d2phi
                 + ((d1a11 + d2a12) * d1v + d1a12 * d2v) * phi
                 - field.a1 * phi * d1v)
    B = -_grid_quad2(integrand, x1, x2)
    return B - _grid_quad2(f * phi, x1, x2)
