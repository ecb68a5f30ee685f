"""Exception types raised across the package."""


class FracLapError(Exception):
    """Base class for all package errors."""


class DomainError(FracLapError, ValueError):
    """A parameter lies outside its admissible range."""


class NonIntegrable(FracLapError, ValueError):
    """The weight |xi|^-p is not integrable over the requested cell."""


class BudgetExceeded(FracLapError, RuntimeError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance."""


class ShapeMismatch(FracLapError, ValueError):
    pass


class CapExceeded(FracLapError, ValueError):
    """A dense oracle was requested on a grid larger than the configured cap."""


class BreakdownNonSPD(FracLapError, ArithmeticError):
    """Conjugate gradients met a direction with non-positive curvature."""


class MaxIterWarning(UserWarning):
    """Conjugate gradients stopped at the iteration cap (soft failure)."""


class PicardNotConverged(FracLapError, RuntimeError):
    def __init__(self, message, step=None, increments=None):
        super().__init__(message)
        self.step = step
        self.increments = list(increments or [])


class NonNestedGrids(FracLapError, ValueError):
    pass


class FileFormatError(FracLapError, ValueError):
    """Bad magic bytes, version or header in a stencil or field file."""
