"""Exception hierarchy.

Each failure class maps onto one CLI exit code, see :mod:`hypstab.cli`.
"""
from __future__ import annotations


class HypstabError(Exception):
    """Base class for all package errors."""


class ValidationError(HypstabError):
    """A scenario, field or configuration violates a precondition."""


class ConfigError(ValidationError):
    """Malformed or out-of-range configuration document."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NonCharacteristicError(ValidationError):
    """A velocity field vanishes somewhere in the domain."""


class WeightError(ValidationError):
    """The weight transport equation could not be solved or verified."""


class UnsolvableGeometryError(WeightError):
    """A characteristic did not leave the domain within the step budget."""


class DissipativityError(ValidationError):
    """No admissible diagonal dissipation matrix for the requested mode."""


class ControlInfeasibleError(HypstabError):
    """The boundary feedback cannot satisfy the required inequality."""


class NoControlAuthorityError(ControlInfeasibleError):
    """The controlled inflow set is empty."""


class InstabilityError(HypstabError):
    """The time integration produced non-finite or exploding values."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)
