"""Exception types shared across the package."""


class XdlfError(Exception):
    """Base class for all package errors."""


class ShapeError(XdlfError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(XdlfError, ValueError):
    """Invalid configuration value, key, or combination."""


class TrainingError(XdlfError, RuntimeError):
    """Training aborted (non-finite loss and similar)."""
