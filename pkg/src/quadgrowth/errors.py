"""Exception hierarchy.

Every error raised on purpose by the package derives from ``QuadGrowthError``
and carries the process exit code the CLI reports for it.
"""


class QuadGrowthError(Exception):
    exit_code = 1


class ConfigError(QuadGrowthError, ValueError):
    exit_code = 2


class PreconditionError(QuadGrowthError, ValueError):
    exit_code = 3


class FocalTimeError(PreconditionError):
    """Requested time lies beyond the estimated focal time."""


class ResolutionError(PreconditionError):
    """The grid cannot represent the requested state or kernel."""


class BoundaryMassError(PreconditionError):
    """Too much mass near the edge of the computational box."""


class NumericalError(QuadGrowthError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    """Newton iteration for the boundary value problem did not converge."""


class InstabilityError(NumericalError):
    """A state became non-finite."""
