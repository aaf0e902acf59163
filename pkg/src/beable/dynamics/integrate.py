"""Integrated transition probabilities p_{i|j}(t, t') from the rate generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError, NumericalError
from ..microstates import EPS_OCC, ProjectorFamily
from .rates import RateKernel
from .system import QuantumSystem

__all__ = ["IntegratedProbabilities", "integrated_probabilities", "integrated_probability_path"]

log = logging.getLogger(__name__)

DRIFT_LIMIT = 1e-6
# Largest (out-rate x step) allowed for an RK4 step. Rates out of a draining
# cell grow like 1/weight, so steps shrink automatically near such events.
_STIFFNESS = 0.1


@dataclass(frozen=True, eq=False)
class IntegratedProbabilities:
    """Column-stochastic matrix: ``matrix[i, j]`` = p_{i|j}(t_to, t_from)."""

    matrix: np.ndarray
    t_from: float
    t_to: float
    drift: float
    steps: int

    def propagate(self, weights) -> np.ndarray:
        return self.matrix @ np.asarray(weights, dtype=float)


class _Generator:
    def __init__(self, system: QuantumSystem, kernel: RateKernel):
        self.system = system
        self.kernel = kernel

    def __call__(self, t: float, segment: int):
        psi = self.system.state_at(t, segment)
        H = self.system.segments[segment][2]
        T, _ = self.kernel.rates(psi, self.kernel.prepare(H))
        R = T.sum(axis=0)
        return T - np.diag(R), float(R.max(initial=0.0))


def integrated_probability_path(system: QuantumSystem, family: ProjectorFamily, t_from: float,
                                times, dt: float, eps_occ: float = EPS_OCC,
                                check_drift: bool = True) -> list[IntegratedProbabilities]:
    """Solve dP/dt = Q(t) P from P(t_from) = I and report P at each of ``times``.

    Classical RK4 with the generator rebuilt from the exactly propagated state
    at every stage. The step is ``dt`` unless the largest out-rate R demands
    R * step <= 0.1; steps never straddle Hamiltonian breakpoints. Columns are
    clipped to [0, 1] and renormalized after each step; the accumulated
    correction is the reported drift.
    """
    times = sorted(float(t) for t in times)
    if not times or times[0] <= t_from:
        raise ConfigError("probe times must lie after t_from")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    kernel = RateKernel(family, system.hbar, eps_occ)
    gen = _Generator(system, kernel)
    n = family.n_cells
    P = np.eye(n)
    t = float(t_from)
    drift = 0.0
    steps = 0
    out = []
    stops = sorted(set(times) | set(system.breakpoints(t_from, times[-1])))
    cached = None  # (t, segment, Q, R) at the current time
    for stop in stops:
        seg = system.segment_index(t)
        while t < stop:
            if cached is None or cached[0] != t or cached[1] != seg:
                Q0, R0 = gen(t, seg)
            else:
                Q0, R0 = cached[2], cached[3]
            h = min(dt, stop - t)
            if R0 > 0:
                h = min(h, _STIFFNESS / R0)
            while True:
                t_end = stop if h >= stop - t else t + h
                h = t_end - t
                Qm, Rm = gen(t + 0.5 * h, seg)
                Q1, R1 = gen(t_end, seg)
                if max(Rm, R1) * h <= 2 * _STIFFNESS or h <= 1e-14 * max(1.0, abs(t)):
                    break
                h = _STIFFNESS / max(Rm, R1)
            k1 = Q0 @ P
            k2 = Qm @ (P + 0.5 * h * k1)
            k3 = Qm @ (P + 0.5 * h * k2)
            k4 = Q1 @ (P + h * k3)
            P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            np.clip(P, 0.0, 1.0, out=P)
            sums = P.sum(axis=0)
            drift += float(np.max(np.abs(sums - 1.0)))
            P /= sums
            t = t_end
            steps += 1
            cached = (t, seg, Q1, R1)
        if stop in times:
            out.append(IntegratedProbabilities(P.copy(), float(t_from), stop, drift, steps))
    span = times[-1] - t_from
    if drift > 0:
        log.debug("integrated probabilities: column drift %.3e over %.3g time units", drift, span)
    if check_drift and drift > DRIFT_LIMIT * max(span, 1.0):
        raise NumericalError(f"column-sum drift {drift:.2e} exceeds {DRIFT_LIMIT:g} per unit time; "
                             "try a smaller dt")
    return out


def integrated_probabilities(system: QuantumSystem, family: ProjectorFamily, t_from: float,
                             t_to: float, dt: float, eps_occ: float = EPS_OCC) -> IntegratedProbabilities:
    """p_{i|j}(t_to, t_from) for the jump process defined by ``family``."""
    if not t_to > t_from:
        raise ConfigError("t_to must be later than t_from")
    return integrated_probability_path(system, family, t_from, [t_to], dt, eps_occ)[0]
