"""Exception hierarchy shared across the package."""


class FadeError(Exception):
    """Base class for all errors raised by :mod:`fade`."""


class DataValidationError(FadeError, ValueError):
    """Input data violates a role, bound or shape requirement."""


class ConfigError(FadeError, ValueError):
    """A run configuration failed validation."""


class ConditioningError(FadeError, ValueError):
    """The basis Gram matrix is (numerically) singular.

    Attributes
    ----------
    columns : list of str
        Names of the columns loading on the near-null eigenvector.
    min_eigenvalue : float
    """

    def __init__(self, message, columns=(), min_eigenvalue=float("nan")):
        super().__init__(message)
        self.columns = list(columns)
        self.min_eigenvalue = min_eigenvalue


class NumericalError(FadeError, ArithmeticError):
    """A solver hit a numerical breakdown (tiny pivot, cycling, non-finite values)."""


class InfeasibleError(FadeError):
    """The unfair-min risk constraint cannot be met in the span of the basis.

    ``min_risk`` is the smallest risk achievable (the least-squares risk), so
    callers can re-target the constraint.
    """

    def __init__(self, message, min_risk):
        super().__init__(message)
        self.min_risk = min_risk


class SignatureMismatchError(FadeError, ValueError):
    """A solution was applied to a basis it was not computed for."""


class StageError(FadeError):
    """A CLI stage was invoked without the artifact of its upstream stage."""
