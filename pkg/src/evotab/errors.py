"""Exception types raised across the package."""


class EvotabError(Exception):
    """Base class for package errors."""


class ParseError(EvotabError, ValueError):
    """Malformed CSV or schema input."""


class SchemaError(EvotabError, ValueError):
    """Data does not conform to the declared or inferred schema."""


class ShapeError(EvotabError, ValueError):
    """Array dimensions do not match the expected layout."""


class MetricError(EvotabError, RuntimeError):
    """A metric could not be computed from the given tables."""


class TrainingError(EvotabError, RuntimeError):
    """Training diverged or was configured inconsistently."""


class MetricWarning(UserWarning):
    """A metric component was skipped or degraded."""
