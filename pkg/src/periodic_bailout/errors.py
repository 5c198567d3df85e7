"""Exception hierarchy shared by all modules."""


class PeriodicBailoutError(Exception):
    """Base class for all library errors."""


class ModelError(PeriodicBailoutError, ValueError):
    pass


class MonotonePaths(ModelError):
    """The process has monotone (non-increasing) paths."""


class InvalidPhaseType(ModelError):
    pass


class InfiniteMean(ModelError):
    pass


class UnsupportedLevyMeasure(ModelError):
    """Only finite-activity phase-type jump laws are supported."""


class SingularResolvent(PeriodicBailoutError, ArithmeticError):
    pass


class ConvergenceFailure(PeriodicBailoutError, ArithmeticError):
    pass


class NearMultipleRoots(PeriodicBailoutError, ArithmeticError):
    pass


class BracketFailure(PeriodicBailoutError, ArithmeticError):
    pass


class DegenerateDenominator(PeriodicBailoutError, ArithmeticError):
    pass


class QuadratureFailure(PeriodicBailoutError, ArithmeticError):
    pass


class ViolationFound(PeriodicBailoutError, AssertionError):
    """A variational inequality failed at some grid point."""

    def __init__(self, x, residual, message=""):
        self.x = float(x)
        self.residual = float(residual)
        super().__init__(message or f"violation at x={self.x:.6g} (residual {self.residual:.3e})")
