"""Physical constants of the one-dimensional flow and their derived sonic data.

All quantities are dimensionless.  The four primitive constants are the
adiabatic exponent ``gamma`` (> 1), the far-field velocity ratio ``zeta0``
(> 1), the momentum density ``J`` (> 0) and the entropy constant ``S0``
(> 0).  From these the sonic speed ``u_s``, the far-field velocity
``u_inf = zeta0 * u_s``, the far-field density ``rho_inf = J / u_inf`` and
the convenience constant ``h0 = (gamma*S0)**(1/(gamma+1))`` are derived.

An optional inlet electric field ``E0`` may be supplied; when negative it
implicitly fixes a subsonic inlet velocity ``u0`` through the trajectory
relation E0 = -sqrt(2 H(u0)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DomainError


@dataclass(frozen=True)
class PhysicalParams:
    gamma: float
    zeta0: float
    J: float
    S0: float
    E0: float = 0.0

    # derived, filled in __post_init__
    u_s: float = field(init=False, repr=False)
    u_inf: float = field(init=False, repr=False)
    rho_inf: float = field(init=False, repr=False)
    h0: float = field(init=False, repr=False)

    def __post_init__(self):
        if not self.gamma > 1:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")
        if not self.zeta0 > 1:
            raise DomainError(f"zeta0 must exceed 1, got {self.zeta0}")
        if not self.J > 0:
            raise DomainError(f"J must be positive, got {self.J}")
        if not self.S0 > 0:
            raise DomainError(f"S0 must be positive, got {self.S0}")
        g = self.gamma
        h0 = (g * self.S0) ** (1.0 / (g + 1.0))
        u_s = (g * self.S0 * self.J ** (g - 1.0)) ** (1.0 / (g + 1.0))
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "u_s", u_s)
        object.__setattr__(self, "u_inf", self.zeta0 * u_s)
        object.__setattr__(self, "rho_inf", self.J / (self.zeta0 * u_s))

    def implied_u0(self) -> float:
        """Subsonic inlet velocity fixed by a negative E0.

        Solves E0**2 / 2 = H(u0) on (0, u_s).  Requires E0 < 0.
        """
        from scipy.optimize import brentq

        from .background import _H_closed

        if not self.E0 < 0:
            raise DomainError("implied_u0 requires E0 < 0")
        target = 0.5 * self.E0 ** 2
        lo = self.u_s
        # H blows up as u -> 0+, so halving the lower endpoint must
        # eventually bracket any positive target.
        for _ in range(2000):
            lo *= 0.5
            if _H_closed(self, lo) > target:
                break
        else:  # pragma: no cover
            raise DomainError("could not bracket implied u0")
        u0 = brentq(lambda u: _H_closed(self, u) - target, lo, self.u_s,
                    xtol=1e-15, rtol=8.9e-16)
        if not 0 < u0 < self.u_s:  # pragma: no cover
            raise DomainError("implied u0 outside (0, u_s)")
        return u0

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma, "zeta0": self.zeta0, "J": self.J,
            "S0": self.S0, "E0": self.E0, "u_s": self.u_s,
            "u_inf": self.u_inf, "rho_inf": self.rho_inf, "h0": self.h0,
        }
