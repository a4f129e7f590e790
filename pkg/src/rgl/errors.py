"""Exception types raised across the package."""


class RGLError(Exception):
    """Base class for all errors raised by rgl."""


class OutOfChart(RGLError):
    pass


class TimeOutOfRange(RGLError):
    pass


class NonpositiveScale(RGLError):
    pass


class BlowUp(RGLError):
    """Step-size underflow, divergence, or the trajectory left the atlas."""


class BVPNoConvergence(RGLError):
    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class ToleranceViolation(RGLError):
    pass


class LineSearchFailure(RGLError):
    pass


class CutLocusSuspected(RGLError):
    """The minimizing branch is not numerically unique."""


class InsufficientSamples(RGLError):
    pass


class ConfigError(RGLError):
    pass


class IOFailure(RGLError):
    """An output artifact could not be written."""
