"""Exception hierarchy shared by every module."""


class FTCError(Exception):
    """Base class for all errors raised by ftclab."""


class InvalidParameterError(FTCError, ValueError):
    """A scalar parameter is outside its allowed range."""


class InvalidInputError(FTCError, ValueError):
    """An array or structured input has the wrong shape or content."""


class ConvergenceError(FTCError, RuntimeError):
    """An iterative procedure hit its iteration cap."""


class DivergenceError(FTCError, RuntimeError):
    """A recursion produced non-finite values.

    ``partial_trace`` is attached by :func:`ftclab.algorithm.run` so callers
    keep whatever was recorded before the blow-up.
    """

    def __init__(self, message, iteration=None, partial_trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial_trace = partial_trace


class AdmissibilityError(FTCError, ValueError):
    """A performance bound was requested outside the region where it holds."""


class DegenerateConstantsError(AdmissibilityError):
    """The two contraction rates of the centroid bound coincide."""
