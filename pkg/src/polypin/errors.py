"""
Exception types raised by polypin.

Everything except :class:`NotConvergedError` subclasses ``ValueError`` so that
callers catching ``ValueError`` keep working.
"""

from typing import Optional


class PotentialSpecError(ValueError):
    """The potential violates |V0| <= M1, M0 > 0 or Lambda >= 0."""


class EnvironmentRangeError(ValueError, IndexError):
    """A time query falls outside the available time range."""


class ParameterError(ValueError):
    """A numeric parameter is outside its admissible range."""


class DomainError(ValueError):
    """A field, kernel or distribution is outside the operation's domain."""


class BudgetExceededError(ValueError):
    """A brute-force enumeration would exceed its path budget."""


class ShapeError(ValueError):
    """Two distributions are indexed by different supports."""


class PreconditionError(ValueError):
    """The potential does not satisfy the conditions an operation needs."""


class KernelConfigurationError(ValueError):
    """A restricted kernel would have non-positive entries."""


class NotConvergedError(RuntimeError):
    """An operation required a converged eigenpair and got an unconverged one."""


class ConfigError(ValueError):
    """
    Experiment configuration could not be parsed or validated.

    Attributes:
        key: Offending configuration key, if known
        line: Line of a JSON syntax error, if known
        column: Column of a JSON syntax error, if known
    """

    def __init__(
        self,
        message: str,
        key: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ) -> None:
        context = []
        if key is not None:
            context.append(f"key '{key}'")
        if line is not None:
            context.append(f"line {line}, column {column}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column
