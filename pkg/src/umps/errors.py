"""Exception hierarchy.

Every error raised on purpose by the library derives from ``UmpsError`` so
callers (and the CLI) can map failure classes to exit codes.
"""


class UmpsError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class DimensionError(UmpsError, ValueError):
    """Tensor or matrix shapes are inconsistent."""

    exit_code = 2


class InjectivityError(UmpsError):
    """The transfer map has a degenerate dominant eigenvalue or singular fixed points."""


class ConvergenceError(UmpsError):
    """An iterative routine did not reach its tolerance."""

    exit_code = 3


class ConditioningError(UmpsError):
    """A matrix needed in inverse form is too badly conditioned."""


class HermiticityError(UmpsError, ValueError):
    """An operator that must be Hermitian is not."""

    exit_code = 2


class CapError(UmpsError, ValueError):
    """A requested size exceeds a hard cap."""

    exit_code = 2


class PairError(UmpsError, ValueError):
    """Two states do not form a valid domain-wall pair."""

    exit_code = 2


class ArgumentError(UmpsError, ValueError):
    """An argument is outside its allowed range."""

    exit_code = 2


class SupportError(UmpsError, ValueError):
    """An operator does not fit in the available block width."""

    exit_code = 2


class BoundsError(UmpsError):
    """Spectral bounds do not enclose the spectrum."""

    def __init__(self, message, bounds=None):
        super().__init__(message)
        self.bounds = bounds
