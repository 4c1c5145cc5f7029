"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigurationError -> 2,
DataError -> 3, NumericError -> 4.
"""


class BevRenderError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BevRenderError):
    """Invalid configuration values or incompatible settings."""


class DataError(BevRenderError):
    """Broken, missing, or inconsistent input data."""


class NumericError(BevRenderError):
    """Non-finite values where finite ones are required."""


class NoSupervisionError(DataError):
    """Every ray of an iteration was filtered; nothing to learn from."""
