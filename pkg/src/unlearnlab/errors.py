"""Exception types shared across the package.

Three buckets: bad configuration or arguments, malformed files, and
numeric breakdown during a computation.  The CLI maps each bucket to a
distinct exit code.
"""


class UnlearnLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UnlearnLabError, ValueError):
    """Invalid argument, config value, or violated precondition."""


class DataFormatError(UnlearnLabError, ValueError):
    """A file on disk does not match the expected layout."""


class NumericError(UnlearnLabError, ArithmeticError):
    """Non-finite values or a diverging iteration inside a computation."""
