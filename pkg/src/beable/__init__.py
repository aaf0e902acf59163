"""Stochastic microstate dynamics for finite-dimensional quantum systems."""

from . import analysis, dynamics, estimators, io, linalg, microstates, scenarios
from .exceptions import (
    AlgebraError,
    BeableError,
    ConfigError,
    DomainError,
    FitError,
    NotNormalError,
    NumericalError,
    RangeError,
    ShapeError,
    SizeError,
    StarvationError,
)

__version__ = "0.1.0"
