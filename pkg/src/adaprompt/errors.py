"""Exception taxonomy shared across the package.

Contract violations are programming/config errors (CLI exit code 1);
format and I/O problems are environmental (exit code 2).
"""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class NumericError(ArithmeticError):
    """A computation produced or encountered non-finite values."""


class DataError(ValueError):
    """A dataset does not satisfy a requested construction."""


class ConfigError(ValueError):
    """A configuration file is malformed or contains unknown keys."""


class FormatError(IOError):
    """A binary container is corrupt, truncated or of unknown version."""
