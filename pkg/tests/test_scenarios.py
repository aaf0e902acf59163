import math

import numpy as np
import pytest

from beable.analysis import equilibration_check, ergodicity_decay
from beable.dynamics import RateKernel, integrated_probabilities, sample_ensemble
from beable.exceptions import ConfigError
from beable.microstates import decompose_pure
from beable.scenarios import (EPR_OUTCOMES, kinetic_operator, make_epr, make_ergodic,
                              make_measurement, make_particle1d, momentum_operator)


def test_kinetic_operator_plane_wave_eigenvalue():
    n, h, M = 64, 0.25, 1.5
    K = kinetic_operator(n, h, M)
    k = 2 * math.pi * 5 / (n * h)
    x = h * np.arange(n)
    psi = np.exp(1j * k * x)
    # lattice dispersion (hbar^2 / M h^2) (1 - cos k h)
    assert np.allclose(K @ psi, (1 - math.cos(k * h)) / (M * h * h) * psi)
    wall = kinetic_operator(n, h, M, boundary="hard-wall")
    assert wall[0, -1] == 0 and np.allclose(wall, wall.conj().T)


def test_momentum_operator_is_exact_on_grid_modes():
    n, h = 32, 0.5
    P = momentum_operator(n, h)
    k = 2 * math.pi * 3 / (n * h)
    psi = np.exp(1j * k * h * np.arange(n))
    assert np.allclose(P @ psi, k * psi)
    assert np.allclose(P, P.conj().T)


def test_particle_packet_and_errors():
    spec = make_particle1d(400, 40, (0, 40), packet={"center": 20, "width": 2, "momentum": 1.0})
    assert abs(np.linalg.norm(spec.initial_state) - 1) < 1e-12
    assert spec.meta["velocity"] == 1.0
    with pytest.raises(ConfigError):
        make_particle1d(400, 40, (0, 40), packet={"width": 0.15})
    with pytest.raises(ConfigError):
        make_particle1d(400, 40, (0, 40), mass=0)


def test_zero_momentum_real_packet_has_no_rates():
    spec = make_particle1d(200, 20, (0, 20), packet={"center": 10, "width": 2, "momentum": 0.0})
    k = RateKernel(spec.families["x"])
    T, _ = k.rates(spec.initial_state, k.prepare(spec.schedule[0][2]))
    assert np.all(T == 0)


def test_particle_potential_enters_hamiltonian():
    V = np.linspace(0, 1, 100)
    spec = make_particle1d(100, 10, (0, 10), packet={"width": 0.5}, potential=V)
    bare = make_particle1d(100, 10, (0, 10), packet={"width": 0.5})
    assert np.allclose(np.diag(spec.schedule[0][2] - bare.schedule[0][2]).real, V)
    with pytest.raises(ConfigError):
        make_particle1d(100, 10, (0, 10), packet={"width": 0.5}, potential=np.zeros(3))


def test_narrow_packet_crosses_deterministically():
    spec = make_particle1d(2000, 4, (0, 4), packet={"center": 1.5, "width": 0.1, "momentum": 100.0})
    fam = spec.families["x"]
    system = spec.system()
    # packet centre reaches the 2|3 boundary at t = 0.005 and is well past it at 0.01
    P = integrated_probabilities(system, fam, 0.0, 0.01, 1e-4).matrix
    assert P[2, 1] > 0.99


def test_measurement_weights_reproduce_born_rule():
    lam = np.array([math.sqrt(0.3), 1j * math.sqrt(0.7)])
    spec = make_measurement(lam)
    fam = spec.families["pointer"]
    w = decompose_pure(spec.system().state_at(spec.meta["pulse_end"]), fam).weights
    cells = spec.meta["outcome_cells"]
    assert abs(w[cells[0]] - 0.3) < 1e-6 and abs(w[cells[1]] - 0.7) < 1e-6


def test_measurement_definite_outcome():
    spec = make_measurement([1.0, 0.0], pointer_grid=240, packet_width=0.25)
    fam = spec.families["pointer"]
    ens = sample_ensemble(spec.system(), fam, 0, spec.run_defaults["t1"], spec.run_defaults["dt"],
                          seed=0, n_trajectories=200, initial_index=spec.meta["home_cell"])
    assert np.all(ens.final_indices == spec.meta["outcome_cells"][0])


@pytest.mark.parametrize("kwargs, needle", [
    ({"pointer_separation": 2.0}, "separation"),
    ({"packet_width": 0.3}, "packet widths"),
    ({"pointer_grid": 120}, "grid spacings"),
])
def test_measurement_resolution_ordering(kwargs, needle):
    with pytest.raises(ConfigError, match=needle):
        make_measurement([0.6, 0.8], **kwargs)


def test_measurement_rejects_unnormalized():
    with pytest.raises(ConfigError):
        make_measurement([0.6, 0.6])


@pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, 0.3])
def test_epr_final_weights(theta):
    spec = make_epr(theta)
    fam = spec.families["AB"]
    w = decompose_pure(spec.system().state_at(spec.meta["times"]["t3"]), fam).weights
    s2, c2 = 0.5 * math.sin(theta) ** 2, 0.5 * math.cos(theta) ** 2
    expected = {"++": s2, "+-": c2, "-+": c2, "--": s2}
    for lab in EPR_OUTCOMES:
        assert abs(w[spec.meta["outcome_cells"][lab]] - expected[lab]) < 1e-8


def test_epr_refinement_consistency():
    spec = make_epr(0.4)
    system = spec.system()
    for t in (0.0, 1.5, 2.5, 3.3, 5.0):
        psi = system.state_at(t)
        joint = decompose_pure(psi, spec.families["AB"]).weights.reshape(3, 3)
        wa = decompose_pure(psi, spec.families["A"]).weights
        wb = decompose_pure(psi, spec.families["B"]).weights
        assert np.allclose(joint.sum(axis=1), wa, atol=1e-10)
        assert np.allclose(joint.sum(axis=0), wb, atol=1e-10)


def test_epr_marginal_a_process_during_b_window():
    spec = make_epr(math.pi / 6)
    t = spec.meta["times"]
    P = integrated_probabilities(spec.system(), spec.families["A"], t["t2"], t["t3"], 0.01).matrix
    assert abs(P[1, 1] - 1) < 1e-6 and abs(P[2, 2] - 1) < 1e-6


def test_epr_theta_range():
    with pytest.raises(ConfigError):
        make_epr(2.0)


def test_ergodic_construction():
    spec = make_ergodic(30, delta_e=2.0, cell_ranks=[10, 20], seed=3, energy=1.0)
    E = spec.meta["energies"]
    assert np.all((E >= 1.0) & (E <= 3.0))
    U = spec.meta["eigenvectors"]
    assert np.allclose(U.conj().T @ U, np.eye(30), atol=1e-10)
    assert list(spec.families["cells"].ranks) == [10, 20]
    with pytest.raises(ConfigError):
        make_ergodic(30, cell_ranks=[10, 10])
    again = make_ergodic(30, delta_e=2.0, cell_ranks=[10, 20], seed=3, energy=1.0)
    assert np.array_equal(again.initial_state, spec.initial_state)


def test_ergodic_long_run_average_matches_dephasing_oracle():
    spec = make_ergodic(40, seed=0)
    rep = equilibration_check(spec.system(), spec.families["cells"], horizon=1e5)
    assert np.max(np.abs(rep.time_averaged - rep.dephasing) / rep.dephasing) < 0.02


def _nonzero_rates(N, seed, samples=40):
    spec = make_ergodic(N, seed=seed)
    system = spec.system()
    k = RateKernel(spec.families["cells"])
    prep = k.prepare(spec.schedule[0][2])
    vals = []
    for t in np.linspace(0, 200, samples):
        T, _ = k.rates(system.state_at(t), prep)
        vals.append(T[T > 0])
    return np.concatenate(vals)


@pytest.mark.xfail(strict=True, reason="heavy tail from small source amplitudes; see decisions ledger")
@pytest.mark.parametrize("N", [20, 40, 80])
def test_ergodic_rate_range_99th_percentile(N):
    upper = 1.0 / math.sqrt(2 * N)
    q99 = np.quantile(_nonzero_rates(N, seed=1), 0.99)
    assert 0.5 * upper <= q99 <= 2 * upper


def test_ergodic_memory_rate_scales_like_sqrt_n():
    ratios = []
    for N in (20, 40, 80):
        spec = make_ergodic(N, seed=0)
        scale = math.sqrt(N)
        fit = ergodicity_decay(spec.system(), spec.families["cells"],
                               np.linspace(0.5, 24, 48) / scale, dt=0.05 / scale)
        ratios.append(fit.mu / scale)
    assert max(ratios) / min(ratios) < 2
