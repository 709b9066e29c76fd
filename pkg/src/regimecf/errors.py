"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4,
internal 5), so raising the right class matters at module boundaries.
"""


class RegimeCFError(Exception):
    """Base class for all package errors."""


class ConfigError(RegimeCFError):
    """Invalid configuration, arguments, or schema of a config file."""


class DataError(RegimeCFError):
    """Input data violates a documented contract (bad values, bad ordering)."""


class ParseError(DataError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    """A data file is structurally wrong (missing columns, wrong header)."""


class NumericError(RegimeCFError):
    """Numerical failure: divergence, non-finite gradients, etc."""


class InternalError(RegimeCFError):
    """Invariant violation that indicates a bug, not a user error."""
