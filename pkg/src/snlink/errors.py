"""Exception types shared across the package."""


class SnlinkError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SnlinkError, ValueError):
    """Invalid configuration or construction parameters."""


class ContractViolation(SnlinkError, ValueError):
    """A precondition of an operation was not met by the caller."""


class NumericalError(SnlinkError, ArithmeticError):
    """A numerical routine failed (singular matrix, non-PSD covariance, NaN)."""
