"""Exception types raised across the package."""


class FracMVError(Exception):
    """Base class for all package errors."""


class ParameterError(FracMVError, ValueError):
    """A scalar parameter (order, Hurst index, tolerance) is out of range."""


class DomainError(FracMVError, ValueError):
    """An argument lies outside the domain of a function."""


class ContractError(FracMVError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class CapacityError(FracMVError, ValueError):
    """Problem size exceeds what the exact algorithm is allowed to handle."""


class NumericError(FracMVError, ArithmeticError):
    """A numerical routine failed (factorization, overflow, NaN)."""


class DivergenceError(NumericError):
    """A time-stepping scheme produced non-finite values."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class NonConvergenceError(NumericError):
    """An iterative scheme hit its iteration cap."""

    def __init__(self, message: str, last_ratio: float | None = None):
        super().__init__(message)
        self.last_ratio = last_ratio


class HypothesisViolation(FracMVError):
    """A model does not satisfy the regularity constants it declares."""


class DegeneracyError(FracMVError):
    """The controllability Gramian of a degenerate system is singular."""


class ConfigError(FracMVError, ValueError):
    """A scenario file cannot be parsed or refers to unknown entries."""
