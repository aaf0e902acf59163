"""Acceptance criteria 1-15, one test each.

Every test records a ``PASS``/``FAIL`` line with its measured quantities and
wall time; the lines are printed in the terminal summary (see conftest.py).
Run just this file with ``pytest -v tests/test_acceptance.py``.
"""

import functools
import math
import os
import time

import numpy as np
import pytest

from beable import cli
from beable import io as bio
from beable.analysis import (binomial_displacement_test, drift_variance, equilibration_check,
                             ergodicity_decay)
from beable.dynamics import (blocked_rate_sum, integrated_probabilities, locality_audit,
                             master_residual, particle_rates_current, rates_mixed, rates_pure,
                             rates_timedep, sample_ensemble)
from beable.linalg import Evolver
from beable.microstates import (ProjectorFamily, block_projectors, build_position_projectors,
                                decompose_mixed, decompose_pure, grid_positions)
from beable.scenarios import EPR_OUTCOMES, make_epr, make_ergodic, make_measurement, make_particle1d
from conftest import random_density, random_hermitian, random_state

RESULTS = []


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run():
            start = time.perf_counter()
            detail, status = "", "PASS"
            try:
                detail = fn() or ""
            except BaseException as exc:
                status, detail = "FAIL", f"{type(exc).__name__}: {exc}".splitlines()[0]
                raise
            finally:
                elapsed = time.perf_counter() - start
                RESULTS.append(f"{status} criterion {number:2d} {title} [{elapsed:.1f} s] {detail}")
        return run
    return wrap


def _random_family(rng, dim, n_cells):
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    cuts = np.sort(rng.choice(np.arange(1, dim), size=n_cells - 1, replace=False))
    return ProjectorFamily.from_bases(dim, np.split(Q, cuts, axis=1))


def _binomial_sigma(freq, p, n):
    return abs(freq - p) / math.sqrt(p * (1 - p) / n)


@criterion(1, "EPR joint outcome frequencies")
def test_c01_epr_probabilities():
    worst, start = [], time.perf_counter()
    for theta in (math.pi / 6, math.pi / 4):
        spec = make_epr(theta)
        fam = spec.families["AB"]
        d = spec.run_defaults
        ens = sample_ensemble(spec.system(), fam, 0.0, d["t1"], d["dt"], seed=7, n_trajectories=10_000,
                              initial_index=d["initial_index"])
        final = np.bincount(ens.final_indices, minlength=fam.n_cells) / ens.n_trajectories
        s2, c2 = 0.5 * math.sin(theta) ** 2, 0.5 * math.cos(theta) ** 2
        target = {"++": s2, "+-": c2, "-+": c2, "--": s2}
        for lab in EPR_OUTCOMES:
            worst.append(_binomial_sigma(final[spec.meta["outcome_cells"][lab]], target[lab], 10_000))
    elapsed = time.perf_counter() - start
    assert max(worst) < 3 and elapsed < 30
    return f"max deviation {max(worst):.2f} sigma"


@criterion(2, "EPR device-A perspective via ODE")
def test_c02_epr_perspectives():
    spec = make_epr(math.pi / 6)
    fam = spec.families["A"]
    t = spec.meta["times"]
    system = spec.system()
    P21 = integrated_probabilities(system, fam, t["t1"], t["t2"], 0.01).matrix
    P32 = integrated_probabilities(system, fam, t["t2"], t["t3"], 0.01).matrix
    err = max(abs(P21[1, 0] - 0.5), abs(P21[2, 0] - 0.5), abs(P32[1, 1] - 1), abs(P32[2, 2] - 1))
    assert err < 1e-6
    return f"max error {err:.1e}"


@criterion(3, "ensemble average reproduces expectation")
def test_c03_born_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 12))
        fam = _random_family(rng, dim, int(rng.integers(1, dim + 1)) if dim > 1 else 1)
        A = random_hermitian(rng, dim)
        obs = sum(fam.projector(i) @ A @ fam.projector(i) for i in range(fam.n_cells))
        psi = random_state(rng, dim)
        d = decompose_pure(psi, fam)
        ens = sum(d.weights[k] * np.vdot(d.microstates[:, k], obs @ d.microstates[:, k]).real
                  for k in range(fam.n_cells) if d.occupied[k])
        worst = max(worst, abs(np.vdot(psi, obs @ psi).real - ens))
    assert worst < 1e-9
    return f"max |difference| {worst:.1e}"


@criterion(4, "one-way rates")
def test_c04_one_way():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 10))
        fam = ProjectorFamily.from_index_sets(
            dim, np.array_split(rng.permutation(dim), int(rng.integers(2, dim + 1))))
        T = rates_pure(decompose_pure(random_state(rng, dim), fam), random_hermitian(rng, dim)).rates
        worst = max(worst, float(np.max(np.minimum(T, T.T))))
    assert worst == 0.0
    return "min(T_ij, T_ji) = 0 on 1000 instances"


def _rabi_residual(dt, th=0.3):
    SX = np.array([[0, 1], [1, 0]], complex)
    fam = ProjectorFamily.from_index_sets(2, [[0], [1]])
    ev = Evolver(SX)
    psi0 = np.array([math.cos(th), 1j * math.sin(th)])
    times = 0.2 + dt * np.arange(5)
    return master_residual([decompose_pure(ev.evolve(psi0, t), fam) for t in times], times, SX)


@criterion(5, "master-equation compatibility")
def test_c05_master_equation():
    r = _rabi_residual(1e-4)
    rs = [_rabi_residual(dt) for dt in (1e-2, 5e-3, 2.5e-3)]
    orders = [math.log2(rs[i] / rs[i + 1]) for i in range(2)]
    assert r < 1e-6 and min(orders) >= 1
    return f"residual {r:.1e} at dt=1e-4, observed orders {orders[0]:.2f}, {orders[1]:.2f}"


@criterion(6, "particle smooth regime")
def test_c06_particle_smooth():
    spec = make_particle1d(1600, 160, (0, 160), 1.0, {"center": 60, "width": 15, "momentum": 1.0})
    fam = spec.families["x"]
    T, dt, v, delta = 5.0, 0.04, spec.meta["velocity"], fam.resolution
    # one jump opportunity per dt, the discrete-time chain the binomial law describes
    ens = sample_ensemble(spec.system(), fam, 0.0, T, dt, seed=2024, n_trajectories=10_000,
                          max_jump_prob=None)
    dv = drift_variance(ens, spec.meta["cell_centers"])
    slope = float(np.polyfit(dv["times"], dv["meanPath"], 1)[0])
    disp = ens.final_indices.astype(int) - ens.initial_indices.astype(int)
    var = float(np.var(disp * delta))
    n_steps = int(round(T / dt))
    _, p = binomial_displacement_test(disp, n_steps, v * dt / delta)
    assert abs(slope - v) < 0.05 * v
    assert abs(var - v * T * delta) < 0.15 * v * T * delta
    assert p > 0.01
    return f"slope {slope:.4f} (v={v}), variance {var:.3f} (vT delta={v * T * delta}), chi2 p={p:.3f}"


@criterion(7, "particle narrow regime")
def test_c07_particle_narrow():
    spec = make_particle1d(2000, 4, (0, 4), packet={"center": 1.5, "width": 0.1, "momentum": 100.0})
    P = integrated_probabilities(spec.system(), spec.families["x"], 0.0, 0.01, 1e-4).matrix
    assert P[2, 1] > 0.99
    return f"p(i+1|i) = {P[2, 1]:.6f}"


@criterion(8, "plane-wave rate on a ring")
def test_c08_plane_wave():
    fam = build_position_projectors(40_000, 40, (0.0, 40.0), "periodic")
    x = grid_positions(fam)
    k, M = 2 * math.pi / 40.0, 1.0
    psi = np.exp(1j * k * x) / math.sqrt(x.size)
    T = particle_rates_current(psi, fam, M).rates
    n = fam.n_cells
    fwd = np.array([T[(j + 1) % n, j] for j in range(n)])
    err = float(np.max(np.abs(fwd - k / (M * fam.resolution))))
    assert err < 1e-8
    return f"max |T - hbar k/(M delta)| = {err:.1e}"


@criterion(9, "measurement outcome statistics")
def test_c09_measurement():
    lam = (math.sqrt(0.3), math.sqrt(0.7))
    spec = make_measurement(lam)
    fam = spec.families["pointer"]
    system = spec.system()
    d = spec.run_defaults
    n = 10_000
    ens = sample_ensemble(system, fam, 0.0, d["t1"], d["dt"], seed=9, n_trajectories=n,
                          initial_index=d["initial_index"])
    cells = spec.meta["outcome_cells"]
    freq = [float(np.mean(ens.final_indices == c)) for c in cells]
    sig = max(_binomial_sigma(f, p, n) for f, p in zip(freq, (0.3, 0.7)))
    end = spec.meta["pulse_end"]
    P = integrated_probabilities(system, fam, end, end + 1.0, d["dt"]).matrix
    cross = max(P[cells[1], cells[0]], P[cells[0], cells[1]])
    assert sig < 3 and cross < 1e-6
    return f"frequencies {freq[0]:.4f}/{freq[1]:.4f} ({sig:.2f} sigma), cross-outcome {cross:.1e}"


def _chain(rng, n):
    H = np.diag(rng.normal(size=n)).astype(complex)
    off = rng.normal(size=n - 1) + 1j * rng.normal(size=n - 1)
    return H + np.diag(off, 1) + np.diag(off.conj(), -1)


@criterion(10, "blocking transformation")
def test_c10_blocking():
    rng = np.random.default_rng(10)
    fam = ProjectorFamily.from_index_sets(16, [[i] for i in range(16)])
    coarse = block_projectors(fam)
    werr = rerr = 0.0
    for _ in range(50):
        psi = random_state(rng, 16)
        H = _chain(rng, 16)
        fine = rates_pure(decompose_pure(psi, fam), H)
        direct = rates_pure(decompose_pure(psi, coarse), H)
        werr = max(werr, float(np.max(np.abs(direct.weights - fine.weights.reshape(8, 2).sum(1)))))
        rerr = max(rerr, float(np.max(np.abs(blocked_rate_sum(fine).rates - direct.rates))))
    assert werr < 1e-8 and rerr < 1e-8
    return f"weight error {werr:.1e}, rate error {rerr:.1e} (nearest-neighbour chain H)"


@criterion(11, "mixed-state reduction")
def test_c11_mixed():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(3, 9))
        fam = ProjectorFamily.from_index_sets(dim, np.array_split(rng.permutation(dim), 3))
        psi = random_state(rng, dim)
        H = random_hermitian(rng, dim)
        a = rates_mixed(decompose_mixed(np.outer(psi, psi.conj()), fam), H).rates
        b = rates_pure(decompose_pure(psi, fam), H).rates
        worst = max(worst, float(np.max(np.abs(a - b))))
    fam = ProjectorFamily.from_index_sets(6, [[0, 1], [2, 3], [4, 5]])
    H = random_hermitian(rng, 6)
    rho0 = random_density(rng, 6, rank=3)
    ev = Evolver(H)
    times = 0.7 + 1e-4 * np.arange(5)
    decs = [decompose_mixed(ev.unitary(t) @ rho0 @ ev.unitary(t).conj().T, fam) for t in times]
    res = master_residual(decs, times, H)
    assert worst < 1e-10 and res < 1e-6
    return f"max |mixed - pure| {worst:.1e}, mixed residual {res:.1e}"


def _co_rotating(dt, seed=3, t=0.4):
    rng = np.random.default_rng(seed)
    H = random_hermitian(rng, 4)
    ev = Evolver(H)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    psi0 = random_state(rng, 4)

    def fam_at(s):
        U = ev.unitary(s)
        return ProjectorFamily.from_bases(4, [U @ Q[:, :2], U @ Q[:, 2:]])

    now = decompose_pure(ev.evolve(psi0, t), fam_at(t))
    nxt = decompose_pure(ev.evolve(psi0, t + dt), fam_at(t + dt))
    return float(np.max(rates_timedep(now, nxt, H, dt).rates))


@criterion(12, "time-dependent rates")
def test_c12_time_dependent():
    dts = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
    vals = [_co_rotating(dt) for dt in dts]
    orders = [math.log2(vals[i] / vals[i + 1]) for i in range(len(dts) - 1)]
    assert min(orders) > 0.9
    return f"max rate {vals[-1]:.1e} at dt={dts[-1]}, orders " + ", ".join(f"{o:.2f}" for o in orders)


def _mu(N, seed=0):
    spec = make_ergodic(N, seed=seed)
    scale = math.sqrt(N)
    fit = ergodicity_decay(spec.system(), spec.families["cells"], np.linspace(0.5, 24, 48) / scale,
                           dt=0.05 / scale)
    return fit.mu


@criterion(13, "ergodicity and equilibration")
def test_c13_ergodicity():
    start = time.perf_counter()
    spec = make_ergodic(40, seed=0)
    rep = equilibration_check(spec.system(), spec.families["cells"], horizon=1e5)
    mu = {N: _mu(N) for N in (20, 40, 80)}
    ratio = mu[80] / mu[20]
    band = mu[40] / math.sqrt(40)
    checks = {"equilibration": rep.max_oracle_deviation < 0.15,
              "mu band": 0.5 <= band <= 2.0,
              "mu ratio": 2 / 1.5 <= ratio <= 2 * 1.5,
              "runtime": time.perf_counter() - start < 300}
    detail = (f"time average vs dephasing oracle {rep.max_oracle_deviation:.4f} of 1/N; "
              f"mu(40)/(sqrt(N) dE) = {band:.3f}; mu(80)/mu(20) = {ratio:.2f}; "
              f"failed: {[k for k, ok in checks.items() if not ok]}")
    assert all(checks.values()), detail
    return detail


@criterion(14, "locality audit")
def test_c14_locality():
    rng = np.random.default_rng(14)
    worst = 0.0
    for seed in range(50):
        da, de = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        fam = ProjectorFamily.from_index_sets(da, [[i] for i in range(da)])
        rep = locality_audit(random_state(rng, da * de), fam, random_hermitian(rng, da),
                             random_hermitian(rng, de), random_hermitian(rng, da * de), seed=seed)
        worst = max(worst, rep.rate_deviation_swapped)
    assert worst < 1e-10
    return f"max rate change under H_E swap {worst:.1e}"


@criterion(15, "determinism across worker counts")
def test_c15_determinism(tmp_path_factory=None):
    spec = make_epr(math.pi / 6)
    fam = spec.families["AB"]
    d = spec.run_defaults
    blobs = set()
    for workers in (1, 4, 8):
        ens = sample_ensemble(spec.system(), fam, 0.0, d["t1"], d["dt"], seed=15, n_trajectories=3000,
                              initial_index=d["initial_index"], n_workers=workers)
        blobs.add(bio.events_csv(ens) + bio.occupancy_csv(ens))
    cli_runs = set()
    import tempfile
    saved = os.environ.get("BEABLE_THREADS")
    try:
        for workers in ("1", "4", "8"):
            os.environ["BEABLE_THREADS"] = workers
            with tempfile.TemporaryDirectory() as out:
                code = cli.run_command(["epr", "--theta", "0.5235987755982988", "--trajectories",
                                        "3000", "--seed", "15", "--output", out])
                assert code == 0
                cli_runs.add(tuple((n, open(os.path.join(out, n), "rb").read())
                                   for n in sorted(os.listdir(out))))
    finally:
        if saved is None:
            os.environ.pop("BEABLE_THREADS", None)
        else:
            os.environ["BEABLE_THREADS"] = saved
    assert len(blobs) == 1 and len(cli_runs) == 1
    return "sampler and CLI outputs byte-identical for 1, 4 and 8 workers"
