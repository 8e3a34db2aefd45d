"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates an architectural or data constraint."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DataError(ValueError):
    """Input data could not be parsed or is malformed."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""
