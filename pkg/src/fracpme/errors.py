"""Exception hierarchy shared by all modules."""


class FracPMEError(Exception):
    """Base class for every error raised by the package."""


class AliasingError(FracPMEError, ValueError):
    """Grid too coarse for the requested transform."""


class DomainError(FracPMEError, ValueError):
    """Argument outside the set where an operation is defined."""


class QuadratureError(FracPMEError, RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConstructionError(FracPMEError, ValueError):
    """A nonlinearity failed validation of its structural conditions."""


class SnapshotMismatchError(FracPMEError, TypeError):
    """Field lives on a different manifold than the operation expects."""


class StepError(FracPMEError, RuntimeError):
    """A time step could not be completed."""

    def __init__(self, message, *, t=None, residuals=(), offending=None):
        super().__init__(message)
        self.t = t
        self.residuals = list(residuals)
        self.offending = offending
