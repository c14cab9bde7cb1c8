"""Exception types shared across the package."""


class SpeculensError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SpeculensError, ValueError):
    """An array argument has the wrong rank or an incompatible axis length.

    Messages name the offending axis so shape bugs are debuggable from the
    traceback alone.
    """


class ParameterError(SpeculensError, ValueError):
    """A scalar argument is outside its documented range."""


class ConfigError(SpeculensError, ValueError):
    """A config file or CLI option set is malformed or inconsistent."""


class UndefinedMetricError(SpeculensError, ValueError):
    """A metric was requested on inputs where it has no defined value
    (e.g. an empty mask, or zero valid disparity pixels)."""


class DegenerateConfigurationError(SpeculensError, RuntimeError):
    """Geometry input admits no unique solution (coincident points,
    rank-deficient linear systems, pure-rotation translation recovery)."""


class EstimationFailedError(SpeculensError, RuntimeError):
    """A robust estimator exhausted its budget without finding a model."""


class TrainingDivergedError(SpeculensError, RuntimeError):
    """Optimization produced a non-finite loss and was aborted.

    ``last_checkpoint`` holds the path of the most recent good checkpoint,
    or None if none was written before the failure.
    """

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
