"""Exception hierarchy shared across the package."""


class BsfaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BsfaError, ValueError):
    """Input data violates an invariant (non-finite entries, shape mismatch)."""


class ConfigurationError(BsfaError, ValueError):
    """Incompatible or missing configuration (tile sizes, sparsity levels)."""


class FormatError(BsfaError):
    """On-disk artifact is malformed (bad magic, version, truncation)."""


class NumericError(BsfaError, ArithmeticError):
    """Non-finite values appeared where finite arithmetic was expected."""


class DegenerateRowError(BsfaError):
    """A query row was left with an empty allowed key set."""
