"""Exception hierarchy shared by all modules.

Contract and configuration failures map to CLI exit code 1, I/O failures
(plain OSError and friends) to exit code 2.
"""


class AffparseError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AffparseError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(AffparseError):
    """An operation was called outside its documented contract."""


class ConfigurationError(AffparseError):
    """A config value or network wiring request is invalid."""


class DataError(AffparseError):
    """Input data violates its schema (bad label ids, corrupt files)."""


class IntegrityError(AffparseError):
    """An internal self-check failed; signals a kernel bug, not user error."""
