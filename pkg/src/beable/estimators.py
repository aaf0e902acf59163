"""scikit-learn style wrappers around decomposition and the jump process.

These are thin adapters for pipeline use; the functional API in
``beable.microstates`` and ``beable.dynamics`` is the primary interface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_state
from .dynamics import (QuantumSystem, RateKernel, RateMatrix, integrated_probabilities,
                       sample_ensemble)
from .exceptions import ConfigError, ShapeError
from .microstates import EPS_OCC, ProjectorFamily, decompose_pure

__all__ = ["MicrostateDecomposer", "MicrostateJumpProcess"]


def _check_family(family) -> ProjectorFamily:
    if not isinstance(family, ProjectorFamily):
        raise ConfigError("family must be a ProjectorFamily")
    return family


class MicrostateDecomposer(TransformerMixin, BaseEstimator):
    """Map state vectors to cell weights |c_i|^2 for a fixed projector family.

    ``fit`` only validates the family (there is nothing to learn), so the
    transformer can sit at the head of a pipeline that consumes weights.
    """

    def __init__(self, family=None, eps_occ: float = EPS_OCC):
        self.family = family
        self.eps_occ = eps_occ

    def fit(self, X=None, y=None):
        fam = _check_family(self.family)
        if not self.eps_occ >= 0:
            raise ConfigError("eps_occ must be non-negative")
        if X is not None:
            self._states(X, fam.dim)
        self.n_cells_ = fam.n_cells
        self.ranks_ = fam.ranks
        self.n_features_in_ = fam.dim
        return self

    @staticmethod
    def _states(X, dim: int) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=complex))
        if X.ndim != 2 or X.shape[1] != dim:
            raise ShapeError(f"expected states of length {dim}, got shape {np.shape(X)}")
        return np.stack([check_state(row, dim) for row in X])

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_cells_")
        X = self._states(X, self.n_features_in_)
        return np.stack([decompose_pure(psi, self.family, self.eps_occ).weights for psi in X])

    def decompose(self, psi):
        """Full decomposition (amplitudes and microstates) of one state."""
        check_is_fitted(self, "n_cells_")
        return decompose_pure(psi, self.family, self.eps_occ)


class MicrostateJumpProcess(BaseEstimator):
    """Jump process of a given system over a projector family.

    ``fit(system)`` binds the system; afterwards ``rates``, ``transition_matrix``,
    ``predict_proba`` and ``sample`` query it.
    """

    def __init__(self, family=None, dt: float = 0.01, seed: int = 0, n_trajectories: int = 1000,
                 eps_occ: float = EPS_OCC, n_workers=None):
        self.family = family
        self.dt = dt
        self.seed = seed
        self.n_trajectories = n_trajectories
        self.eps_occ = eps_occ
        self.n_workers = n_workers

    def fit(self, system, y=None):
        if not isinstance(system, QuantumSystem):
            raise ConfigError("fit expects a QuantumSystem")
        fam = _check_family(self.family)
        if fam.dim != system.dim:
            raise ShapeError(f"family acts on dim {fam.dim}, system has dim {system.dim}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        self.system_ = system
        self.n_cells_ = fam.n_cells
        self._kernel = RateKernel(fam, system.hbar, self.eps_occ)
        return self

    def rates(self, t: float) -> RateMatrix:
        check_is_fitted(self, "system_")
        H = self.system_.hamiltonian(t)
        T, w = self._kernel.rates(self.system_.state_at(t), self._kernel.prepare(H))
        return RateMatrix(T, w)

    def transition_matrix(self, t_from: float, t_to: float) -> np.ndarray:
        """Column-stochastic P with P[i, j] = p_{i|j}(t_to, t_from)."""
        check_is_fitted(self, "system_")
        return integrated_probabilities(self.system_, self.family, t_from, t_to, self.dt,
                                        self.eps_occ).matrix

    def predict_proba(self, sources, t_from: float, t_to: float) -> np.ndarray:
        """Rows are distributions over target cells, one per source index."""
        idx = np.asarray(sources, dtype=int).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_cells_):
            raise ShapeError("source index out of range")
        return self.transition_matrix(t_from, t_to)[:, idx].T

    def sample(self, t0: float, t1: float, initial_index=None):
        check_is_fitted(self, "system_")
        return sample_ensemble(self.system_, self.family, t0, t1, self.dt, self.seed,
                               self.n_trajectories, initial_index, self.eps_occ, self.n_workers)
