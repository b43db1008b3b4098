"""Exception hierarchy for metamorphic MHE."""

from typing import Optional, Sequence

import numpy as np


class MmheError(Exception):
    """Base class for all estimator, solver and analysis failures."""


class DimensionError(MmheError, ValueError):
    """Matrix or vector dimensions are inconsistent."""


class ConfigError(MmheError, ValueError):
    """Configuration or model document is invalid."""


class NotSchurError(MmheError):
    """A matrix required to be Schur stable is not."""

    def __init__(self, message: str, spectral_radius: float):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class UnobservableError(MmheError):
    """The pair (A, C) is not observable."""


class PolePlacementError(MmheError):
    """Observer gain could not reproduce the requested spectrum."""

    def __init__(self, message: str, achieved: Sequence[complex]):
        super().__init__(f"{message}; achieved eigenvalues: {list(achieved)}")
        self.achieved = np.asarray(achieved)


class SingularMatrixError(MmheError):
    """A matrix that must be inverted is singular or not positive definite."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class ConvergenceError(MmheError):
    """An iteration did not converge within its cap."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(
            f"{message} after {iterations} iterations (last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class RpiError(MmheError):
    """No axis-aligned robust positively invariant box exists or was found."""


class InfeasibleError(MmheError):
    """A quadratic program has no feasible point.

    ``certificate`` is a nonnegative multiplier vector y with A_in^T y = 0 and
    b_in^T y < 0, when the solver produced one.
    """

    def __init__(self, message: str, certificate: Optional[np.ndarray] = None):
        super().__init__(message)
        self.certificate = certificate


class WindowNotReadyError(MmheError):
    """The measurement window does not hold enough samples yet."""


class DivergenceError(MmheError):
    """An estimator produced non-finite estimates."""
