"""Error taxonomy shared across the package.

Every failure a caller can act on maps to one of these types. Numerical
failures carry enough context (time, residual) to be diagnosed from a log
line alone.
"""

from __future__ import annotations


class DynequivError(Exception):
    """Base class for all package errors."""


class ConfigError(DynequivError):
    """Invalid user-supplied configuration or CLI arguments."""


class DataError(DynequivError):
    """Dataset or manifest contents violate a contract."""


class StructuralError(DynequivError):
    """Network description is malformed (unknown buses, bad partition, ...)."""


class DegenerateNetworkError(DynequivError):
    """A required matrix factorization does not exist (singular reduction)."""


class NonconvergenceError(DynequivError):
    """An iterative solve hit its iteration cap.

    Attributes:
        residual: max-norm of the last correction.
        t: simulation time at which the step failed, when applicable.
    """

    def __init__(self, message: str, residual: float | None = None, t: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.t = t


class DivergenceError(DynequivError):
    """A trajectory or adjoint left the finite range."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class TrainingFailureError(DynequivError):
    """Training could not proceed (all scenarios diverged, degenerate loss)."""
