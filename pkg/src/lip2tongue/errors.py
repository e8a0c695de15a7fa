"""Exception hierarchy shared by every module."""


class Lip2TongueError(Exception):
    """Base class for all package errors."""


class DimensionError(Lip2TongueError, ValueError):
    """Array shapes do not conform."""


class ConfigError(Lip2TongueError, ValueError):
    """Invalid configuration value or combination."""


class BoundsError(Lip2TongueError, IndexError):
    """A region or index falls outside its container."""


class UsageError(Lip2TongueError, RuntimeError):
    """An API was called in a state that does not allow it."""


class NonFiniteError(Lip2TongueError, FloatingPointError):
    """A computation produced NaN or Inf."""


class TrainingDivergedError(NonFiniteError):
    """Training loss became non-finite."""
