"""Statistics over trajectories and decompositions: time averages,
equilibration, memory loss and particle drift."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .dynamics.integrate import integrated_probability_path
from .dynamics.sampling import Ensemble, JumpTrajectory, sample_ensemble
from .dynamics.system import QuantumSystem
from .exceptions import ConfigError, FitError, RangeError
from .microstates import EPS_OCC, CoarseObservable, ProjectorFamily

__all__ = [
    "OccupancyStats",
    "occupancy_stats",
    "time_average",
    "EquilibrationReport",
    "equilibration_check",
    "DecayFit",
    "memory_metric",
    "fit_decay",
    "ergodicity_decay",
    "drift_variance",
    "binomial_displacement_test",
]


@dataclass(frozen=True, eq=False)
class OccupancyStats:
    times: np.ndarray
    frequencies: np.ndarray
    weights: np.ndarray
    n_trajectories: int

    def standard_errors(self) -> np.ndarray:
        p = np.clip(self.weights, 0.0, 1.0)
        return np.sqrt(p * (1 - p) / self.n_trajectories)

    def max_sigma(self) -> float:
        """Largest |frequency - weight| in binomial standard errors (floored at 1/n)."""
        se = np.maximum(self.standard_errors(), 1.0 / self.n_trajectories)
        return float(np.max(np.abs(self.frequencies - self.weights) / se))


def occupancy_stats(ensemble: Ensemble) -> OccupancyStats:
    return OccupancyStats(ensemble.times, ensemble.frequencies(), ensemble.theory_weights,
                          ensemble.n_trajectories)


def time_average(trajectory: JumpTrajectory, observable, window=None, n_quad: int = 8) -> float:
    """(1/T) * integral over the window of the occupied microstate's expectation.

    ``observable`` is a CoarseObservable (its cell values are the microstate
    expectations), an array of per-slot expectations, or a callable
    ``f(t) -> per-slot expectations`` for expectations that change in time; the
    latter is integrated with ``n_quad``-point Gauss-Legendre on every interval
    of constant occupancy.
    """
    lo, hi = (trajectory.t0, trajectory.t1) if window is None else map(float, window)
    if lo < trajectory.t0 - 1e-12 or hi > trajectory.t1 + 1e-12 or not hi > lo:
        raise RangeError(f"window [{lo}, {hi}] not inside [{trajectory.t0}, {trajectory.t1}]")
    if isinstance(observable, CoarseObservable):
        values: np.ndarray | Callable = np.asarray(observable.values, dtype=float)
    elif callable(observable):
        values = observable
    else:
        values = np.asarray(observable, dtype=float)
    nodes, wq = np.polynomial.legendre.leggauss(n_quad)
    total = 0.0
    for a, b, idx in trajectory.segments():
        a, b = max(a, lo), min(b, hi)
        if b <= a:
            continue
        if callable(values):
            ts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            total += 0.5 * (b - a) * sum(w * values(t)[idx] for w, t in zip(wq, ts))
        else:
            total += (b - a) * values[idx]
    return float(total / (hi - lo))


@dataclass(frozen=True, eq=False)
class EquilibrationReport:
    time_averaged: np.ndarray
    target: np.ndarray
    dephasing: np.ndarray
    fluctuation: np.ndarray
    max_relative_deviation: float
    max_oracle_deviation: float
    fraction_beyond: float
    frozen: bool


def equilibration_check(system: QuantumSystem, family: ProjectorFamily, horizon: float,
                        samples: int = 2000) -> EquilibrationReport:
    """Compare time-averaged cell weights with d_i / N on [t0, t0 + horizon].

    The time average is evaluated in closed form from the energy
    representation. The oracle is the infinite-time (dephased) average
    sum_n <n|Pi_i|n> |<n|Psi0>|^2 and the fluctuation scale is the matching
    temporal standard deviation sqrt(sum_{n != m} |<n|Pi_i|m>|^2 p_n p_m),
    both valid for non-degenerate energy gaps. ``max_oracle_deviation`` is
    measured in units of d_i / N. ``samples`` evenly spaced times feed
    ``fraction_beyond`` (share of (time, cell) pairs further than three
    fluctuation scales from the oracle) and the frozen-dynamics flag.
    """
    if len(system.segments) != 1:
        raise ConfigError("equilibration_check needs a time-independent Hamiltonian")
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    ev = system._evolvers[0]
    c0 = system._coeffs[0]
    p = np.abs(c0) ** 2
    ranks = family.ranks.astype(float)
    target = ranks / ranks.sum()
    omega_t = np.subtract.outer(ev.energies, ev.energies) * (horizon / system.hbar)
    with np.errstate(divide="ignore", invalid="ignore"):
        damp = np.where(np.abs(omega_t) > 1e-12, np.expm1(1j * omega_t) / (1j * omega_t), 1.0)
    coh = np.outer(c0.conj(), c0) * damp
    times = system.t0 + horizon * (np.arange(samples) + 0.5) / samples
    C = np.stack([ev.phases(t - system.t0) * c0 for t in times])  # (samples, N) energy amplitudes
    W = np.empty((samples, family.n_cells))
    avg = np.empty(family.n_cells)
    deph = np.empty(family.n_cells)
    fluct = np.empty(family.n_cells)
    for i in range(family.n_cells):
        M = ev.vectors.conj().T @ family.basis(i)  # <n|basis of cell i>
        Pi = M @ M.conj().T
        avg[i] = float(np.real(np.sum(coh * Pi)))
        W[:, i] = np.sum(np.abs(C @ M) ** 2, axis=1)
        deph[i] = float(np.real(np.diag(Pi)) @ p)
        off = np.abs(Pi) ** 2
        np.fill_diagonal(off, 0.0)
        fluct[i] = float(np.sqrt(p @ off @ p))
    frozen = bool(np.max(W.std(axis=0)) < 1e-10)
    with np.errstate(divide="ignore", invalid="ignore"):
        beyond = np.abs(W - deph) > 3 * np.where(fluct > 0, fluct, np.inf)
    return EquilibrationReport(
        time_averaged=avg, target=target, dephasing=deph, fluctuation=fluct,
        max_relative_deviation=float(np.max(np.abs(avg - target) / target)),
        max_oracle_deviation=float(np.max(np.abs(avg - deph) / target)),
        fraction_beyond=float(beyond.mean()), frozen=frozen,
    )


@dataclass(frozen=True, eq=False)
class DecayFit:
    times: np.ndarray
    metric: np.ndarray
    mu: float
    intercept: float
    residual: float
    used: np.ndarray


def memory_metric(P: np.ndarray, sources=None) -> float:
    """max over targets i of max_{j,k} |P_ij - P_ik| over the given source columns."""
    P = np.asarray(P)
    if sources is not None:
        P = P[:, sources]
    return float(np.max(P.max(axis=1) - P.min(axis=1)))


def fit_decay(times, metric, floor: float) -> DecayFit:
    """Least-squares fit of log m(T) = a - mu T over points above ``floor``."""
    times = np.asarray(times, dtype=float)
    metric = np.asarray(metric, dtype=float)
    data = {"times": times, "metric": metric, "floor": floor}
    used = metric > floor
    if used.sum() < 3:
        raise FitError("fewer than three points above the noise floor", data)
    tu, mu_ = times[used], metric[used]
    rises = np.diff(mu_) > np.maximum(floor, 0.05 * mu_[:-1])
    if np.any(rises):
        raise FitError("memory metric is not monotone beyond the noise floor", data)
    if mu_[-1] >= mu_[0] * (1 - 1e-9):
        raise FitError("memory metric does not decay", data)
    slope, intercept = np.polyfit(tu, np.log(mu_), 1)
    resid = float(np.sqrt(np.mean((np.log(mu_) - (intercept + slope * tu)) ** 2)))
    if not slope < 0:
        raise FitError("fitted decay rate is not positive", data)
    return DecayFit(times, metric, float(-slope), float(intercept), resid, used)


def ergodicity_decay(system: QuantumSystem, family: ProjectorFamily, probe_times, seed: int = 0,
                     dt: float | None = None, t_from: float = 0.0, trajectories: int | None = None,
                     noise_floor: float = 1e-9, eps_occ: float = EPS_OCC) -> DecayFit:
    """Fit the exponential loss of memory of the initial microstate.

    By default p_{i|j}(t_from + T, t_from) comes from the ODE integrator and
    points below ``noise_floor`` are excluded. With ``trajectories`` set, it
    is estimated by sampling that many paths from each occupied source (seed
    derived from ``seed``) and the floor becomes 2 / sqrt(trajectories).
    """
    probe_times = np.sort(np.asarray(probe_times, dtype=float))
    if probe_times.size < 4:
        raise ConfigError("need at least four probe times")
    from .dynamics.rates import RateKernel

    w0 = RateKernel(family, system.hbar, eps_occ).weights(system.state_at(t_from))
    sources = np.flatnonzero(w0 >= eps_occ)
    if dt is None:
        dt = float(probe_times[0]) / 4
    if trajectories is None:
        path = integrated_probability_path(system, family, t_from, t_from + probe_times, dt, eps_occ)
        metric = np.array([memory_metric(ip.matrix, sources) for ip in path])
        floor = noise_floor
    else:
        n = family.n_cells
        counts = np.zeros((probe_times.size, n, n))
        t_end = t_from + probe_times[-1]
        for j in sources:
            ens = sample_ensemble(system, family, t_from, t_end, dt, seed * 100003 + int(j),
                                  trajectories, initial_index=int(j), eps_occ=eps_occ)
            for k, t in enumerate(t_from + probe_times):
                row = int(np.argmin(np.abs(ens.times - t)))
                counts[k, :, j] = np.bincount(ens.occupancy[row], minlength=n) / trajectories
        metric = np.array([memory_metric(c, sources) for c in counts])
        floor = 2.0 / np.sqrt(trajectories)
    return fit_decay(probe_times, metric, floor)


def drift_variance(ensemble: Ensemble, cell_centers) -> dict:
    """Per-probe-time mean and variance of the occupied cell centre, t0 included."""
    centers = np.asarray(cell_centers, dtype=float)
    pos = np.vstack([centers[ensemble.initial_indices][None, :], centers[ensemble.occupancy]])
    return {"times": np.r_[ensemble.t0, ensemble.times], "meanPath": pos.mean(axis=1),
            "variancePath": pos.var(axis=1)}


def binomial_displacement_test(displacements, n_steps: int, p: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer displacements against Binomial(n_steps, p).

    Adjacent outcomes are pooled until each bin expects at least
    ``min_expected`` counts. Returns (statistic, p_value).
    """
    d = np.asarray(displacements, dtype=int)
    n = d.size
    if np.any(d < 0) or np.any(d > n_steps):
        return float("inf"), 0.0
    observed = np.bincount(d, minlength=n_steps + 1).astype(float)
    expected = stats.binom.pmf(np.arange(n_steps + 1), n_steps, p) * n
    bins_o, bins_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    if bins_e:
        bins_o[-1] += acc_o
        bins_e[-1] += acc_e
    if len(bins_e) < 2:
        raise ConfigError("too few populated bins for a chi-square test")
    res = stats.chisquare(bins_o, np.asarray(bins_e) * (sum(bins_o) / sum(bins_e)))
    return float(res.statistic), float(res.pvalue)
