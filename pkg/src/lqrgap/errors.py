"""Typed exceptions raised across the package."""


class LqrGapError(Exception):
    """Base class for all package errors."""


class SymmetryError(LqrGapError, ValueError):
    """Input expected to be symmetric is not."""


class DimensionError(LqrGapError, ValueError):
    """Shapes are inconsistent."""


class InstabilityError(LqrGapError, ValueError):
    """A matrix required to be Schur stable has spectral radius >= 1."""


class NumericalError(LqrGapError, ArithmeticError):
    """A numerical routine failed or produced an unusable result."""


class RankError(NumericalError):
    """A linear system is singular or too ill-conditioned to solve."""


class IterationLimitError(NumericalError):
    """An iterative method hit its iteration cap before converging."""


class SpectrumError(LqrGapError, ValueError):
    """A matrix required to be positive definite is not."""


class ModelAssumptionError(LqrGapError, ValueError):
    """A structural assumption on the system (e.g. range(A) in range(B)) fails."""


class DivergenceError(LqrGapError, ArithmeticError):
    """A simulated trajectory blew up (entries beyond the divergence guard)."""


class StaleValueParamsError(LqrGapError, ValueError):
    """Value-function parameters were computed for a different gain or horizon."""


class ValidationError(LqrGapError, ValueError):
    """Configuration or parameter values are outside their valid ranges."""
