"""Exception and warning types raised across fgplab."""


class FGPLabError(Exception):
    """Base class for all fgplab errors."""


class ValidationError(FGPLabError, ValueError):
    """Invalid user input (shapes, weights, configuration fields)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class EstimationError(ValidationError):
    """Input data too short or too sparse for a stable estimate."""


class NumericalError(FGPLabError):
    """Base class for failures that occur while computing."""


class BankruptcyError(NumericalError):
    """Portfolio wealth reached a nonpositive value."""

    def __init__(self, message, step, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class DegenerateNumeraireError(NumericalError):
    """Numeraire wealth or variance is nonpositive where it must not be."""


class EvaluationError(NumericalError):
    """A generating function or its derivatives returned nonfinite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RankError(NumericalError):
    """Factor vectors are numerically linearly dependent."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class FitError(NumericalError):
    """Nonlinear least-squares fit did not converge."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DomainWarning(UserWarning):
    """Evaluation outside the neighbourhood a generating function is defined on."""


class UnboundedGrowthWarning(UserWarning):
    """Quadratic growth form has no interior maximum."""
