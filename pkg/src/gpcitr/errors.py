"""Exception hierarchy shared by every module."""


class GpcError(Exception):
    """Base class for all library errors."""


class DomainError(GpcError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class InvalidValueError(DomainError):
    """A value is non-finite or otherwise unusable."""


class ShapeError(GpcError, ValueError):
    """Array or vector dimensions do not agree."""


class IngestionError(GpcError, ValueError):
    """A data file could not be turned into a trial dataset."""


class ResourceError(GpcError, RuntimeError):
    """A request would exceed a configured resource budget."""
