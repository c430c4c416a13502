"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FracBsdeError(Exception):
    """Base class for all package errors."""


class DomainError(FracBsdeError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvalidCoefficientError(FracBsdeError, ValueError):
    """A coefficient function violates its structural requirements."""


class ConstantViolationError(FracBsdeError, ValueError):
    """Kernel/Lipschitz constants outside their admissible range."""


class InfeasibleError(FracBsdeError, ValueError):
    """No admissible value exists for the requested constraint set."""

    def __init__(self, message: str, violated: str | None = None):
        super().__init__(message)
        self.violated = violated


class ConfigError(FracBsdeError, ValueError):
    """Experiment configuration failed validation."""


class NumericalError(FracBsdeError, ArithmeticError):
    """A numerical procedure broke down."""


class FactorizationError(NumericalError):
    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


class DomainTruncationError(NumericalError):
    """Too many forward paths left the truncated spatial domain."""


class IllConditionedBasisError(NumericalError):
    pass


class GeneratorError(NumericalError):
    """The generator returned a non-finite value."""

    def __init__(self, message: str, payload: dict | None = None):
        super().__init__(message)
        self.payload = payload or {}


class DivergenceError(NumericalError):
    """Picard iteration failed to converge; carries the trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class PreconditionError(FracBsdeError, ValueError):
    pass
