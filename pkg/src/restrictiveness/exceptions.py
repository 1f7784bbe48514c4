"""Exception types raised by the package."""


class RestrictivenessError(Exception):
    """Base class for package errors."""


class NumericalError(RestrictivenessError, ArithmeticError):
    """A factorization or other numerical routine failed."""


class OptimizationError(RestrictivenessError):
    """No optimizer start produced a finite objective value."""


class DomainError(RestrictivenessError, ValueError):
    """Input lies outside the domain where a prediction rule is defined."""


class ConfigError(RestrictivenessError, ValueError):
    """A run configuration failed to parse or validate."""


class DataError(RestrictivenessError, ValueError):
    """Market data failed validation."""


class DegenerateError(RestrictivenessError, ValueError):
    """A normalizing quantity is zero, so the requested ratio is undefined."""
