"""Exception types raised across the package.

Each error carries enough context in its message to identify the offending
input (operand shapes, key names, iteration counts) without a debugger.
"""


class SurvfuseError(Exception):
    """Base class for all package errors."""


class ShapeError(SurvfuseError, ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class DomainError(SurvfuseError, ValueError):
    """Input is outside the mathematical domain (empty vector, non-finite)."""


class DegenerateInputError(SurvfuseError, ValueError):
    """Input carries too little information (e.g. too few usable pixels)."""


class RankDeficiencyError(SurvfuseError, ValueError):
    """Data spans fewer directions than the operation requires."""


class EmptyBagError(SurvfuseError, ValueError):
    """An attention operation received an empty token set."""


class TapeError(SurvfuseError, ValueError):
    """A backward pass received a tape that does not match its forward."""


class NoEventsError(SurvfuseError, ValueError):
    """A survival batch contains no observed events."""


class UndefinedMetricError(SurvfuseError, ValueError):
    """The requested metric has no comparable data to evaluate."""


class ConvergenceError(SurvfuseError, RuntimeError):
    """An iterative solver hit its iteration limit.

    The last iterate is attached as ``last_iterate`` so callers can inspect
    how far the solver got.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SeparationError(SurvfuseError, RuntimeError):
    """The partial-likelihood Hessian is singular (monotone likelihood)."""


class OptimizerStateError(SurvfuseError, ValueError):
    """Optimizer state and gradients disagree with the parameter layout."""


class CohortError(SurvfuseError, ValueError):
    """A cohort violates a training precondition (size, events, folds)."""


class ConfigError(SurvfuseError, ValueError):
    """A configuration file or key is invalid."""
