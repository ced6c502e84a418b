class WalkbackError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(WalkbackError, ValueError):
    """Invalid configuration, shapes or arguments."""


class UsageError(WalkbackError, RuntimeError):
    """An API was called out of order (e.g. backward on a stale tape)."""


class TrainingError(WalkbackError, RuntimeError):
    """Training produced non-finite values."""


class OperatorError(WalkbackError, RuntimeError):
    """A transition operator produced non-finite outputs."""


class DomainError(WalkbackError, ValueError):
    """A state lies outside the operator's support."""
