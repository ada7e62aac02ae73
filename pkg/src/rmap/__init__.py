"""Randomized MAP posterior sampling for Bayesian inverse problems."""

__version__ = "0.1.0"

from rmap.errors import (
    ConfigError,
    SolverFailure,
    StagnationError,
    UndefinedIACTError,
    UnsupportedDimensionError,
)
from rmap.prior import GaussianMeasure, build_prior
from rmap.problem import InverseProblem, Randomization

__all__ = [
    "ConfigError",
    "GaussianMeasure",
    "InverseProblem",
    "Randomization",
    "SolverFailure",
    "StagnationError",
    "UndefinedIACTError",
    "UnsupportedDimensionError",
    "build_prior",
]
