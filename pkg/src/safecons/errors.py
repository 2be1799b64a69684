"""Exception hierarchy shared by every module."""


class SafeconsError(Exception):
    """Base class for all package errors."""


class ConfigError(SafeconsError, ValueError):
    """A scenario or object was constructed with inconsistent data."""


class NumericalError(SafeconsError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class InvariantViolation(SafeconsError):
    """A structural precondition (nesting, Hurwitz, ...) does not hold."""


class RegulatorInfeasible(SafeconsError):
    """The regulator equations have no solution within tolerance."""


class DivergenceError(SafeconsError):
    """Integration produced a non-finite state."""

    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"non-finite state at t={self.t:.6g}")
