"""Exception types raised by wmfield."""


class WMError(Exception):
    """Base class for all wmfield errors."""


class ConfigError(WMError, ValueError):
    """Invalid parameter or configuration value."""


class NumericalError(WMError, ArithmeticError):
    """Non-PD matrix, failed factorization or eigensolve."""


class AlignmentError(NumericalError):
    """Discrete eigenvector too poorly resolved to choose its sign."""


class NotApplicable(WMError):
    """Expected convergence rate is nonpositive for the requested norm."""
