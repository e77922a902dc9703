"""Exception types shared across the registration toolkit."""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(RegistrationError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(RegistrationError):
    """Geometry too degenerate to process (coincident points, rank-deficient data)."""


class EmptySetError(RegistrationError):
    """A stage produced no usable elements and the computation cannot continue."""


class FileFormatError(RegistrationError):
    """A data file could not be parsed."""
