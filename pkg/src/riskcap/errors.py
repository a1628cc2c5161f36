"""Exception hierarchy shared by every riskcap module."""

from __future__ import annotations


class RiskcapError(Exception):
    """Base class for all library errors."""


class ModelError(RiskcapError, ValueError):
    """Market or configuration data cannot define a valid model."""


class DomainError(RiskcapError, ValueError):
    """An argument lies outside the domain of the operation."""


class AdmissibilityError(DomainError):
    """A control violates the integrability/positivity requirements."""


class InfeasibilityError(RiskcapError):
    """Parameters fall outside every case the solver can handle.

    ``condition`` names the violated condition so callers (and the CLI)
    can report it verbatim.
    """

    def __init__(self, message: str, condition: str | None = None):
        super().__init__(message)
        self.condition = condition


class NumericalError(RiskcapError, ArithmeticError):
    """An iterative method failed; carries the last estimates for diagnosis."""

    def __init__(self, message: str, estimates: tuple[float, ...] = ()):
        super().__init__(message)
        self.estimates = tuple(estimates)
