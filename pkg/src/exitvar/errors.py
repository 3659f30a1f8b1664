"""Exception hierarchy.

Numerical failures (``NumericalError`` subclasses) are distinguished from
configuration/usage errors so the command line runner can map them to
different exit codes.
"""


class ExitVarError(Exception):
    """Base class for all package errors."""


class ConfigError(ExitVarError, ValueError):
    """Invalid user input: malformed config, expression or domain."""


class ExpressionSyntaxError(ConfigError):
    """Parse failure in a coefficient expression; carries the character offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class NumericalError(ExitVarError):
    """A well-formed problem that cannot be solved numerically."""


class EllipticityError(NumericalError):
    """Symmetric part of the diffusion matrix is not positive definite."""


class PecletError(NumericalError):
    """Grid Peclet number too large for centered advection."""


class SingularSystemError(NumericalError):
    """Linear system singular or numerically singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(NumericalError):
    """Iterative procedure failed to converge."""


class DegenerateSourceError(NumericalError):
    """Saddle normalizer vanishes for the given source term."""


class GridMismatchError(ExitVarError, ValueError):
    """Grid functions or operators defined on different grids."""
