"""Exception hierarchy shared by the library and the CLI."""


class LETNetError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(LETNetError, ValueError):
    """Invalid shapes, hyperparameters or configuration files."""

    exit_code = 2


class UsageError(LETNetError, RuntimeError):
    """API misuse, e.g. calling ``backward`` twice on the same graph."""

    exit_code = 2


class NumericError(LETNetError, ArithmeticError):
    exit_code = 3


class DataError(LETNetError, ValueError):
    """Malformed or out-of-range data read from disk."""

    exit_code = 4


class CheckpointError(DataError):
    pass


class CheckpointMismatch(CheckpointError, ConfigError):
    """Checkpoint tensors do not fit the requested model configuration."""

    exit_code = 2
