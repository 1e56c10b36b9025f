"""Exception hierarchy shared by all wavedir modules."""


class WavedirError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(WavedirError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class SchemaError(WavedirError):
    """An input file does not match the documented column or header layout."""


class RecordError(WavedirError):
    """A single data line could not be parsed."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InsufficientDataError(WavedirError, ValueError):
    """Too few rows or windows to perform the operation."""


class UndefinedAngleError(WavedirError, ValueError):
    """A (sin, cos) pair of exactly (0, 0) has no direction."""


class StaleCacheError(WavedirError):
    """A forward cache is missing or does not match the current parameters."""


class NonFiniteGradientError(WavedirError, FloatingPointError):
    """A gradient contained NaN or Inf; the optimizer step was refused."""


class ArtifactError(WavedirError):
    """A pipeline artifact is missing or incompatible with the current command."""
