"""Exception types shared across the package."""

import numpy as np


class DomainError(ValueError):
    """Parameter vector outside the open parameter domain of a model."""


class DomainExitError(DomainError):
    """A local alternative theta0 + t/sqrt(n) left the parameter domain."""


class SingularityError(ValueError):
    """Density requested at a point where it is infinite."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization hit a nonpositive pivot.

    Attributes
    ----------
    pivot : int
        One-based index of the leading minor that failed.
    """

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot})")


class QuadratureError(RuntimeError):
    """Quadrature refinement exhausted its budget without meeting tolerance."""


class IntegrabilityWarning(RuntimeWarning):
    """Integrand exponent condition for a trace limit does not hold."""


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""
