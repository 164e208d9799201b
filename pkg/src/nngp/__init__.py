"""Deep Gaussian networks at finite and infinite width.

Modules: ``activation`` (nonlinearities), ``kernel`` (limit covariance
recursion), ``netsim`` (finite-width sampling), ``gplimit`` (Gaussian
process sampling and Holder estimates), ``diagnostics`` (convergence
statistics), ``config``/``runner``/``cli`` (experiment harness).
"""

from .activation import Activation, Envelope, Kind
from .errors import ConfigError, DomainError, NNGPError, NumericError, RangeError, ResourceError
from .kernel import (CovMatrix, InputSet, NetworkParams, QuadratureSpec, bivariate_expectation,
                     holder_moment_bound, kernel_at_depth, layer_step, psd_repair)

__version__ = "0.1.0"

__all__ = [
    "Activation", "Envelope", "Kind", "CovMatrix", "InputSet", "NetworkParams", "QuadratureSpec",
    "bivariate_expectation", "holder_moment_bound", "kernel_at_depth", "layer_step", "psd_repair",
    "NNGPError", "DomainError", "ResourceError", "NumericError", "RangeError", "ConfigError",
]
