"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration or input file is invalid or inconsistent."""


class NumericDomainError(ArithmeticError):
    """A numeric quantity left its valid domain (log of zero, NaN, ...)."""
