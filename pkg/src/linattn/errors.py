"""Exception taxonomy shared across the package.

Every error class doubles as a ValueError (or ArithmeticError for numeric
failures) so callers that don't care about the category can still catch the
builtin type.
"""


class LinattnError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(LinattnError, ValueError):
    """Shapes of the operands are incompatible with the operation."""


class ConfigurationError(LinattnError, ValueError):
    """A config value is invalid (bad group count, factor < 1, ...)."""


class ContractError(LinattnError, ValueError):
    """An API precondition was violated (non-scalar loss, empty report, ...)."""


class DataError(LinattnError, ValueError):
    """External data is malformed (bad label value, truncated file, ...)."""


class NumericError(LinattnError, ArithmeticError):
    """A computation produced or encountered a non-finite / invalid value."""
