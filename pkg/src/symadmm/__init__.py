"""Inexact symmetric proximal ADMM with run-time certificate checks.

Solves ``min f(x) + g(y)`` subject to ``Ax + By = b`` with an inexact,
relative-error x-step, an exact proximal y-step and two multiplier updates
weighted by the acceleration parameters ``(tau, theta)``.
"""

from .admm import (AcceptanceError, ConfigurationError, IterateState, PointwiseResiduals, Problem,
                   RunReport, solve, step)
from .linop import LinearOperator, SpdOperator
from .region import AccelParams, RegionError, in_region, sigma_tilde_default

__version__ = "0.1.0"

__all__ = [
    "AcceptanceError",
    "ConfigurationError",
    "IterateState",
    "PointwiseResiduals",
    "Problem",
    "RunReport",
    "solve",
    "step",
    "LinearOperator",
    "SpdOperator",
    "AccelParams",
    "RegionError",
    "in_region",
    "sigma_tilde_default",
]
