"""Exception types raised by the idet package."""


class IDETError(Exception):
    """Base class for all package errors."""


class ConfigError(IDETError, ValueError):
    """Invalid system parameters or experiment configuration."""


class InvalidChannelError(IDETError, ValueError):
    """Channel taps are empty, too long, or inconsistent with the system size."""


class UnsupportedDiodeError(IDETError, ValueError):
    """Diode polynomial cannot be inverted (k2 must be strictly positive)."""


class SurrogateDomainError(IDETError, ValueError):
    """A fractional-programming surrogate left the domain of log(1 + x)."""


class NumericError(IDETError, ArithmeticError):
    """Objective or gradient evaluated to a non-finite value."""


class InfeasibleError(IDETError):
    """The energy-harvesting requirements cannot be met within the power budget."""
