"""Integrated probabilities (ODE) and the Monte-Carlo jump sampler."""

import math

import numpy as np
import pytest

from beable.dynamics import (QuantumSystem, RateKernel, default_workers, integrated_probabilities,
                             integrated_probability_path, sample_ensemble, sample_trajectory)
from beable.exceptions import ConfigError, NumericalError, RangeError
from beable.microstates import ProjectorFamily
from beable.scenarios import make_epr, make_ergodic
from conftest import random_hermitian, random_state

SX = np.array([[0, 1], [1, 0]], complex)
CELLS2 = ProjectorFamily.from_index_sets(2, [[0], [1]])


def _rabi(theta=0.3):
    return QuantumSystem.static(SX, np.array([math.cos(theta), 1j * math.sin(theta)]))


def test_system_schedule_validation():
    with pytest.raises(ConfigError):
        QuantumSystem([(0, 1, SX), (2, 3, SX)], np.array([1, 0]))
    s = QuantumSystem([(0, 1, SX), (1, math.inf, np.zeros((2, 2)))], np.array([1, 0]))
    assert s.segment_index(1.0) == 1 and s.breakpoints(0, 5) == [1.0]
    with pytest.raises(RangeError):
        s.state_at(-1)
    # after the drive switches off the state is frozen
    assert np.allclose(s.state_at(3.0), s.state_at(1.0))


def test_zero_rates_identity_and_no_events(rng):
    fam = ProjectorFamily.from_index_sets(3, [[0], [1], [2]])
    system = QuantumSystem.static(np.diag([0.1, 0.5, -0.3]), random_state(rng, 3))
    assert np.allclose(integrated_probabilities(system, fam, 0, 2.0, 0.1).matrix, np.eye(3))
    ens = sample_ensemble(system, fam, 0, 2.0, 0.1, seed=1, n_trajectories=50)
    assert ens.event_time.size == 0


def test_rk4_transports_weights(rng):
    fam = ProjectorFamily.from_index_sets(5, [[0], [1, 2], [3, 4]])
    system = QuantumSystem.static(random_hermitian(rng, 5), random_state(rng, 5))
    k = RateKernel(fam)
    path = integrated_probability_path(system, fam, 0.0, [0.5, 1.0, 1.5], 0.01)
    w0 = k.weights(system.state_at(0))
    for ip in path:
        assert np.allclose(ip.matrix.sum(axis=0), 1, atol=1e-7)
        assert np.all(ip.matrix >= 0) and np.all(ip.matrix <= 1)
        assert np.max(np.abs(ip.propagate(w0) - k.weights(system.state_at(ip.t_to)))) < 1e-6


def test_ode_rejects_bad_window():
    with pytest.raises(ConfigError):
        integrated_probabilities(_rabi(), CELLS2, 1.0, 0.5, 0.1)
    with pytest.raises(ConfigError):
        integrated_probabilities(_rabi(), CELLS2, 0.0, 0.5, 0.0)


def test_epr_device_a_perspective():
    spec = make_epr(math.pi / 6)
    fam = spec.families["A"]
    times = spec.meta["times"]
    P21 = integrated_probabilities(spec.system(), fam, times["t1"], times["t2"], 0.01).matrix
    assert abs(P21[1, 0] - 0.5) < 1e-6 and abs(P21[2, 0] - 0.5) < 1e-6
    P32 = integrated_probabilities(spec.system(), fam, times["t2"], times["t3"], 0.01).matrix
    assert abs(P32[1, 1] - 1) < 1e-6 and abs(P32[2, 2] - 1) < 1e-6


def test_rabi_ode_matches_monte_carlo():
    system = _rabi()
    t1 = 1.0
    P = integrated_probabilities(system, CELLS2, 0.0, t1, 0.01).matrix
    n = 100_000
    for j in range(2):
        ens = sample_ensemble(system, CELLS2, 0.0, t1, 0.01, seed=20 + j, n_trajectories=n,
                              initial_index=j)
        freq = np.bincount(ens.final_indices, minlength=2) / n
        sigma = np.sqrt(P[:, j] * (1 - P[:, j]) / n)
        assert np.all(np.abs(freq - P[:, j]) <= 3 * sigma + 1e-12), (j, freq, P[:, j])


def test_ensemble_faithfulness_from_weights():
    spec = make_ergodic(12, seed=4)
    fam = spec.families["cells"]
    n = 10_000
    ens = sample_ensemble(spec.system(), fam, 0.0, 4.0, 0.05, seed=9, n_trajectories=n)
    freq = ens.frequencies()
    sigma = np.sqrt(ens.theory_weights * (1 - ens.theory_weights) / n)
    z = np.abs(freq - ens.theory_weights) / np.where(sigma > 0, sigma, np.inf)
    # a few of the many (time, cell) pairs may exceed 3 sigma by chance
    assert np.mean(z > 3) < 0.01
    assert ens.repair_fraction < 1e-3


def test_determinism_across_workers_and_single_trajectory():
    spec = make_ergodic(10, seed=2)
    fam = spec.families["cells"]
    runs = [sample_ensemble(spec.system(), fam, 0, 3.0, 0.05, seed=5, n_trajectories=5000,
                            n_workers=w) for w in (1, 4, 8)]
    for other in runs[1:]:
        for name in ("initial_indices", "occupancy", "event_trajectory", "event_time", "event_from",
                     "event_to", "event_is_repair"):
            assert np.array_equal(getattr(runs[0], name), getattr(other, name))
    single = sample_trajectory(spec.system(), fam, 0, 3.0, 0.05, seed=5, trajectory_id=4321)
    ref = runs[0].trajectory(4321)
    assert single.initial_index == ref.initial_index and single.events == ref.events


def test_trajectory_records_and_audit():
    spec = make_ergodic(8, seed=1)
    fam = spec.families["cells"]
    ens = sample_ensemble(spec.system(), fam, 0, 5.0, 0.05, seed=3, n_trajectories=300, audit=True)
    for m in range(20):
        tr = ens.trajectory(m)
        times = [e[0] for e in tr.changes()]
        assert times == sorted(times)
        assert tr.index_at(tr.t1) == ens.final_indices[m]
        for t, a, b in tr.events:
            assert a != b
        segs = list(tr.segments())
        assert segs[0][0] == 0 and segs[-1][1] == 5.0
        assert all(0 <= to < fam.n_cells for _, _, to in tr.events)


def test_fixed_initial_index_and_seed_validation():
    ens = sample_ensemble(_rabi(), CELLS2, 0, 0.5, 0.05, seed=0, n_trajectories=10, initial_index=1)
    assert np.all(ens.initial_indices == 1)
    with pytest.raises(ConfigError):
        sample_ensemble(_rabi(), CELLS2, 0, 0.5, 0.05, seed=-1, n_trajectories=10)
    with pytest.raises(ConfigError):
        sample_ensemble(_rabi(), CELLS2, 0, 0.5, 0.05, seed=0, n_trajectories=0)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("BEABLE_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("BEABLE_THREADS", "zero")
    with pytest.raises(ConfigError):
        default_workers()


def test_breakpoints_split_substeps():
    drive = QuantumSystem([(0, 0.55, SX), (0.55, math.inf, np.zeros((2, 2)))],
                          np.array([1, 0], complex))
    ens = sample_ensemble(drive, CELLS2, 0, 1.0, 0.1, seed=2, n_trajectories=2000)
    # no jumps once the drive is off
    assert np.all(ens.event_time[~ens.event_is_repair] <= 0.55 + 1e-12)
    target = math.sin(0.55) ** 2
    freq = np.mean(ens.final_indices == 1)
    assert abs(freq - target) < 4 * math.sqrt(target * (1 - target) / 2000)


def test_fixed_step_mode():
    system = QuantumSystem.static(SX, np.array([1, 0], complex))
    ens = sample_ensemble(system, CELLS2, 0.0, 1.0, 0.1, seed=1, n_trajectories=200, max_jump_prob=None)
    assert ens.steps == 10
    # the theta = 0.3 state passes a node at t = 0.3 where the rate diverges
    with pytest.raises(NumericalError):
        sample_ensemble(_rabi(), CELLS2, 0.0, 1.0, 0.1, seed=1, n_trajectories=10, max_jump_prob=None)
    with pytest.raises(ConfigError):
        sample_ensemble(system, CELLS2, 0.0, 1.0, 0.1, seed=1, n_trajectories=10, max_jump_prob=0)
