"""Spectral densities, Toeplitz likelihoods and LAN diagnostics for stationary Gaussian series."""

from .errors import (ConfigError, DomainError, DomainExitError, IntegrabilityWarning,
                     NotPositiveDefiniteError, QuadratureError, SingularityError)
from .spectral_models import ARFIMA, FractionalGaussianNoise, WhiteNoise, make_model

__version__ = "0.1.0"

__all__ = [
    "ARFIMA", "FractionalGaussianNoise", "WhiteNoise", "make_model",
    "ConfigError", "DomainError", "DomainExitError", "IntegrabilityWarning",
    "NotPositiveDefiniteError", "QuadratureError", "SingularityError",
]
