"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, TrainingError -> 4.
"""


class FlowcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FlowcastError):
    """Invalid configuration value or malformed config file."""


class DataError(FlowcastError):
    """Input data violates the documented schema or an invariant."""


class TrainingError(FlowcastError):
    """Training diverged or could not produce a usable model."""
