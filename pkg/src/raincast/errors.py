"""Shared exception types."""


class ConfigurationError(ValueError):
    """Raised when shapes, strides, or dimensions are mutually inconsistent."""


class NumericError(ArithmeticError):
    """Raised when a numeric precondition fails beyond tolerance."""
