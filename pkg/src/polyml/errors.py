"""Exception types raised across the package."""


class PolymlError(Exception):
    """Base class for library errors."""


class ShapeError(PolymlError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class DataError(PolymlError, ValueError):
    """Input data violates a precondition (parse failure, constant column, ...)."""


class ConvergenceError(PolymlError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class TrainingDivergedError(PolymlError, RuntimeError):
    """Loss became non-finite during training."""


class UndefinedMetricError(PolymlError, ValueError):
    """A metric is mathematically undefined for the given inputs."""


class NotFittedError(PolymlError, ValueError):
    """Model has not been fitted."""


class ConfigError(PolymlError, ValueError):
    """A run configuration is invalid; the message names the offending field."""
