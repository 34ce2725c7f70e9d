"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems (shape/argument/
format/config) exit 1, numeric failures exit 2.
"""


class OtalignError(Exception):
    """Base class for all package errors."""


class ShapeError(OtalignError, ValueError):
    """Operands have incompatible dimensions."""


class ArgumentError(OtalignError, ValueError):
    """An argument violates a precondition (range, emptiness, ...)."""


class NumericError(OtalignError, ArithmeticError):
    """A computation produced or encountered a non-finite value."""


class FormatError(OtalignError, ValueError):
    """A file or stream does not match its declared format."""


class ConfigError(OtalignError, ValueError):
    """An experiment/dataset config failed validation."""


class StateError(OtalignError, RuntimeError):
    """An operation was called against stale or inconsistent state."""
