"""Rates, master-equation checks, integrated probabilities and jump sampling."""

from .integrate import IntegratedProbabilities, integrated_probabilities, integrated_probability_path
from .rates import (
    LocalityReport,
    RateKernel,
    RateMatrix,
    blocked_rate_sum,
    locality_audit,
    marginal_rates,
    master_residual,
    particle_rates_current,
    rates_mixed,
    rates_pure,
    rates_timedep,
)
from .sampling import Ensemble, JumpTrajectory, default_workers, sample_ensemble, sample_trajectory
from .system import QuantumSystem

__all__ = [
    "QuantumSystem",
    "RateMatrix",
    "RateKernel",
    "rates_pure",
    "rates_timedep",
    "rates_mixed",
    "particle_rates_current",
    "marginal_rates",
    "blocked_rate_sum",
    "LocalityReport",
    "locality_audit",
    "master_residual",
    "IntegratedProbabilities",
    "integrated_probabilities",
    "integrated_probability_path",
    "JumpTrajectory",
    "Ensemble",
    "sample_ensemble",
    "sample_trajectory",
    "default_workers",
]
