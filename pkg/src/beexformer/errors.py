"""Exception types shared across the package."""


class BeexError(Exception):
    """Base class for all package errors."""


class DimensionError(BeexError, ValueError):
    """Operand extents do not agree."""


class ContractError(BeexError, RuntimeError):
    """A documented precondition was violated by the caller."""


class NumericalError(BeexError, FloatingPointError):
    """An operation produced a non-finite value."""


class ConfigError(BeexError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(BeexError, ValueError):
    """Malformed or inconsistent input data."""


class FormatError(BeexError, ValueError):
    """A serialized artifact is corrupt or of the wrong kind."""
