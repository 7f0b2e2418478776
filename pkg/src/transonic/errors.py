"""Exception hierarchy shared across the library."""


class TransonicError(Exception):
    """Base class for all library-specific failures."""


class DomainError(TransonicError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class OutsideTrajectoryError(DomainError):
    """A state does not lie on (or near) the accelerating trajectory."""


class ExtentError(DomainError):
    """A requested integration length exceeds the maximal existence length."""

    def __init__(self, message: str, l_max: float):
        super().__init__(message)
        self.l_max = l_max


class NoRootError(TransonicError):
    """Bracket expansion failed to locate a sign change."""


class AdmissibilityError(DomainError):
    """A perturbation state violates one of the smallness bounds."""


class VacuumError(DomainError):
    """A density assembly hit a non-positive pressure argument."""


class TopologyError(TransonicError):
    """The degeneracy set does not have the expected structure."""


class QuadratureInconsistencyError(TransonicError):
    """A discrete integral identity failed beyond its truncation budget."""


class ExtensionFailureError(TransonicError):
    """Coefficient extension could not certify its structure conditions."""


class SingularSystemError(TransonicError):
    """A discrete linear system was singular or too ill-conditioned."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(TransonicError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class CouplingDivergenceError(ConvergenceError):
    """Alternating coupled solve detected sustained residual growth."""
