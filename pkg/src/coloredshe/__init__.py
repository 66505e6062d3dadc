"""Numerical laboratory for the stochastic heat equation on the torus driven
by noise that is white in time and Riesz-correlated in space.

Modules
-------
kernel      heat kernel on the torus, Riesz covariance coefficients
noise       exact spectral sampling of the noise and stochastic convolution
solver      exact spectral and finite-difference solution paths, factorization
smallball   grid events, small-ball probabilities, exponent fits
analysis    variance/covariance series, regularity, tails, correlation checks
estimators  scikit-learn style wrappers
cli         command line entry point
"""
__version__ = "0.1.0"

from .exceptions import (ConditioningError, ConfigurationError, ContractError, CoverageError,
                         DomainError, FitError, NumericError, SingularityError)
from .kernel import RieszKernel, heat_kernel, riesz_coefficients, riesz_covariance
from .rng import RngSpec

__all__ = [
    "ConditioningError", "ConfigurationError", "ContractError", "CoverageError", "DomainError",
    "FitError", "NumericError", "SingularityError", "RieszKernel", "RngSpec", "heat_kernel",
    "riesz_coefficients", "riesz_covariance", "__version__",
]
