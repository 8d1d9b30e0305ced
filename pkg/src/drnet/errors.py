"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class DrnetError(Exception):
    pass


class ShapeError(DrnetError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(DrnetError, ValueError):
    """Bad configuration value, unknown key, or unusable command line."""


class DataError(DrnetError):
    """Dataset or file content is missing, unreadable, or malformed."""


class NumericError(DrnetError, ArithmeticError):
    """A non-finite value showed up where finite math was required."""
