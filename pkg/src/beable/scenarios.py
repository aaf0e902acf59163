"""Ready-made systems: a particle on a line, a pointer measurement, an EPR pair
read out by two devices, and a random-matrix model of equilibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group

from ._validation import check_hermitian
from .dynamics.system import QuantumSystem
from .exceptions import ConfigError
from .microstates import ProjectorFamily, build_position_projectors, cell_centers

__all__ = [
    "ScenarioSpec",
    "kinetic_operator",
    "momentum_operator",
    "gaussian_packet",
    "make_particle1d",
    "make_measurement",
    "make_epr",
    "make_ergodic",
    "EPR_OUTCOMES",
]

EPR_OUTCOMES = ("++", "+-", "-+", "--")
_DEVICE_LABELS = ("0", "+", "-")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    schedule: tuple
    initial_state: np.ndarray
    families: dict
    run_defaults: dict
    hbar: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for _, _, H in self.schedule:
            check_hermitian(H)

    def system(self) -> QuantumSystem:
        return QuantumSystem(self.schedule, self.initial_state, self.schedule[0][0], self.hbar)


def kinetic_operator(n: int, spacing: float, mass: float, hbar: float = 1.0,
                     boundary: str = "periodic") -> np.ndarray:
    """-(hbar^2 / 2M) d^2/dx^2 with the 3-point stencil."""
    c = hbar**2 / (2.0 * mass * spacing**2)
    K = np.zeros((n, n))
    idx = np.arange(n)
    K[idx, idx] = 2 * c
    K[idx[:-1], idx[:-1] + 1] = -c
    K[idx[:-1] + 1, idx[:-1]] = -c
    if boundary == "periodic" and n > 2:
        K[0, n - 1] = K[n - 1, 0] = -c
    return K.astype(complex)


def momentum_operator(n: int, spacing: float, hbar: float = 1.0) -> np.ndarray:
    """Spectral momentum on a periodic grid: hbar k applied in Fourier space.

    exp(-i v p t / hbar) shifts a grid function rigidly by v t, exactly when
    v t is a whole number of grid spacings.
    """
    k = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
    F = np.fft.fft(np.eye(n), axis=0)
    P = np.fft.ifft((hbar * k)[:, None] * F, axis=0)
    return 0.5 * (P + P.conj().T)


def gaussian_packet(x: np.ndarray, center: float, width: float, momentum: float = 0.0,
                    hbar: float = 1.0, period: float | None = None) -> np.ndarray:
    """Grid amplitudes of exp(i p x / hbar) exp(-(x - x_c)^2 / (4 w^2)), unit norm."""
    d = x - center
    if period is not None:
        d = (d + 0.5 * period) % period - 0.5 * period
    psi = np.exp(1j * momentum * x / hbar) * np.exp(-d**2 / (4 * width**2))
    return psi / np.linalg.norm(psi)


def make_particle1d(grid_points: int, cells: int, domain=(0.0, 40.0), mass: float = 1.0,
                    packet: dict | None = None, potential=None, boundary: str = "periodic",
                    hbar: float = 1.0, t_final: float = 1.0) -> ScenarioSpec:
    """Free (or potential-driven) particle on a grid with position cells.

    ``packet`` has keys center, width, momentum. ``potential`` is an array of
    grid values or a callable of position.
    """
    fam = build_position_projectors(grid_points, cells, domain, boundary)
    h = fam.meta["spacing"]
    lo, hi = fam.meta["domain"]
    packet = dict(packet or {})
    center = float(packet.get("center", 0.5 * (lo + hi)))
    width = float(packet.get("width", 4 * h))
    momentum = float(packet.get("momentum", 0.0))
    if width < 2 * h:
        raise ConfigError(f"packet width {width} is below two grid spacings ({2 * h})")
    if not mass > 0:
        raise ConfigError("mass must be positive")
    x = lo + (np.arange(grid_points) + 0.5) * h
    H = kinetic_operator(grid_points, h, mass, hbar, boundary)
    if potential is not None:
        V = potential(x) if callable(potential) else np.asarray(potential, dtype=float)
        if V.shape != (grid_points,):
            raise ConfigError("potential must have one value per grid point")
        H = H + np.diag(V)
    period = (hi - lo) if boundary == "periodic" else None
    psi = gaussian_packet(x, center, width, momentum, hbar, period)
    v = momentum / mass
    delta = fam.resolution
    dt = 0.04 * delta / abs(v) if v else 0.01
    return ScenarioSpec(
        name="particle",
        schedule=((0.0, math.inf, H),),
        initial_state=psi,
        families={"x": fam},
        run_defaults={"dt": dt, "t1": float(t_final), "trajectories": 10000},
        hbar=hbar,
        meta={"x": x, "mass": mass, "velocity": v, "cell_centers": cell_centers(fam),
              "packet": {"center": center, "width": width, "momentum": momentum}},
    )


def make_measurement(lambdas, pointer_grid: int = 480, pointer_separation: float = 8.0,
                     packet_width: float = 0.15, pulse: float = 1.0, cells: int = 12,
                     domain=(0.0, 24.0), pointer_mass: float = 100.0, settle: float = 1.0,
                     hbar: float = 1.0) -> ScenarioSpec:
    """Pointer measurement of a K-outcome system.

    The system (outcome basis |a>) is coupled to a pointer on a periodic grid
    during [0, pulse] by H_c = sum_a |a><a| (x) v_a p, with p the spectral
    momentum and v_a = s_a / pulse. Branch a of the pointer packet is thereby
    rigidly translated by s_a = (a - (K-1)/2) * separation. A free kinetic
    term of mass ``pointer_mass`` acts throughout. Composite index:
    a * pointer_grid + k.
    """
    lam = np.asarray(lambdas, dtype=complex)
    K = lam.size
    if K < 1 or abs(np.sum(np.abs(lam) ** 2) - 1.0) > 1e-9:
        raise ConfigError("outcome amplitudes must have unit total weight")
    fam_x = build_position_projectors(pointer_grid, cells, domain, "periodic")
    h = fam_x.meta["spacing"]
    delta = fam_x.resolution
    if not pointer_separation >= 2 * delta:
        raise ConfigError(f"pointer separation {pointer_separation} must be at least twice the "
                          f"cell size {delta}")
    if not delta >= 8 * packet_width:
        raise ConfigError(f"cell size {delta} must be at least 8 packet widths "
                          f"({8 * packet_width}) so packets stay inside one cell")
    if packet_width < 2 * h:
        raise ConfigError(f"packet width {packet_width} is below two grid spacings ({2 * h})")
    centers = cell_centers(fam_x)
    home = cells // 2
    x0 = centers[home]
    shifts = (np.arange(K) - (K - 1) / 2) * pointer_separation
    targets = []
    for s in shifts:
        if abs(s / h - round(s / h)) > 1e-9 or abs(s / delta - round(s / delta)) > 1e-9:
            raise ConfigError(f"shift {s} must be a whole number of cells and grid spacings")
        tgt = home + int(round(s / delta))
        if not 0 <= tgt < cells:
            raise ConfigError("pointer targets fall outside the domain")
        targets.append(tgt)
    lo, hi = fam_x.meta["domain"]
    x = lo + (np.arange(pointer_grid) + 0.5) * h
    phi = gaussian_packet(x, x0, packet_width, 0.0, hbar, hi - lo)
    psi = np.kron(lam, phi)
    free = np.kron(np.eye(K), kinetic_operator(pointer_grid, h, pointer_mass, hbar))
    p = momentum_operator(pointer_grid, h, hbar)
    coupling = sum(np.kron(np.diag(np.eye(K)[a]), (s / pulse) * p) for a, s in enumerate(shifts))
    sets = [np.concatenate([a * pointer_grid + c for a in range(K)]) for c in fam_x.cells]
    family = ProjectorFamily.from_index_sets(K * pointer_grid, sets, fam_x.labels, delta,
                                             {"kind": "pointer"})
    schedule = ((0.0, float(pulse), free + coupling), (float(pulse), math.inf, free))
    return ScenarioSpec(
        name="measurement",
        schedule=schedule,
        initial_state=psi,
        families={"pointer": family},
        run_defaults={"dt": 0.01 * pulse, "t1": float(pulse + settle), "trajectories": 10000,
                      "initial_index": home},
        hbar=hbar,
        meta={"outcome_cells": tuple(targets), "home_cell": home, "probabilities": np.abs(lam) ** 2,
              "pulse_end": float(pulse), "x": x},
    )


def _epr_index(a, b, s1, s2):
    return ((a * 3 + b) * 2 + s1) * 2 + s2


def make_epr(theta: float, pulse_duration: float = 1.0, hbar: float = 1.0) -> ScenarioSpec:
    """Singlet pair read out by device A (z basis) and then device B (n basis).

    Space: A (3) (x) B (3) (x) qubit 1 (2) (x) qubit 2 (2); device states
    ordered (0, +, -), qubit basis (z+, z-). With tau = pulse_duration the
    schedule is idle on [0, tau), A pulse on [tau, 2 tau), idle, B pulse on
    [3 tau, 4 tau), idle afterwards. Each pulse generator
    hbar g sum_s (i |D_s><D_0| - i |D_0><D_s|) (x) |s><s|, g = pi / (2 tau),
    moves |D_0>|s> to |D_s>|s> exactly (no phase) at the end of the pulse.
    """
    if not 0 <= theta <= math.pi / 2:
        raise ConfigError("theta must lie in [0, pi/2]")
    tau = float(pulse_duration)
    if not tau > 0:
        raise ConfigError("pulse duration must be positive")
    g = math.pi / (2 * tau)
    c, s = math.cos(theta), math.sin(theta)
    z = np.eye(2)
    n_basis = np.array([[c, s], [-s, c]])  # rows: n+, n- in the z basis
    dev = np.eye(3)

    def transfer(sign):
        return 1j * np.outer(dev[sign], dev[0]) - 1j * np.outer(dev[0], dev[sign])

    I2, I3 = np.eye(2), np.eye(3)
    H_A = sum(hbar * g * np.kron(np.kron(np.kron(transfer(k), I3), np.outer(z[k - 1], z[k - 1])), I2)
              for k in (1, 2))
    H_B = sum(hbar * g * np.kron(np.kron(np.kron(I3, transfer(k)), I2),
                                 np.outer(n_basis[k - 1], n_basis[k - 1]))
              for k in (1, 2))
    psi = np.zeros(36, dtype=complex)
    psi[_epr_index(0, 0, 0, 1)] = 1 / math.sqrt(2)
    psi[_epr_index(0, 0, 1, 0)] = -1 / math.sqrt(2)
    zero = np.zeros((36, 36), dtype=complex)
    schedule = ((0.0, tau, zero), (tau, 2 * tau, H_A), (2 * tau, 3 * tau, zero),
                (3 * tau, 4 * tau, H_B), (4 * tau, math.inf, zero))
    qubits = range(4)

    def cells_for(pred):
        return np.array([_epr_index(a, b, q // 2, q % 2) for a in range(3) for b in range(3)
                         for q in qubits if pred(a, b)])

    fam_a = ProjectorFamily.from_index_sets(36, [cells_for(lambda a, b, k=k: a == k) for k in range(3)],
                                            _DEVICE_LABELS)
    fam_b = ProjectorFamily.from_index_sets(36, [cells_for(lambda a, b, k=k: b == k) for k in range(3)],
                                            _DEVICE_LABELS)
    fam_ab = ProjectorFamily.from_index_sets(
        36, [cells_for(lambda a, b, k=k: 3 * a + b == k) for k in range(9)],
        tuple(x + y for x in _DEVICE_LABELS for y in _DEVICE_LABELS))
    outcome_cells = {lab: 3 * _DEVICE_LABELS.index(lab[0]) + _DEVICE_LABELS.index(lab[1])
                     for lab in EPR_OUTCOMES}
    probs = {"++": 0.5 * s * s, "+-": 0.5 * c * c, "-+": 0.5 * c * c, "--": 0.5 * s * s}
    return ScenarioSpec(
        name="epr",
        schedule=schedule,
        initial_state=psi,
        families={"A": fam_a, "B": fam_b, "AB": fam_ab},
        run_defaults={"dt": 0.01 * tau, "t1": 5 * tau, "trajectories": 10000, "initial_index": 0},
        hbar=hbar,
        meta={"times": {"t1": 0.0, "t2": 2.5 * tau, "t3": 5 * tau}, "outcome_cells": outcome_cells,
              "probabilities": probs, "theta": theta},
    )


def make_ergodic(N: int, delta_e: float = 1.0, cell_ranks=None, seed: int = 0,
                 energy: float = 0.0, hbar: float = 1.0) -> ScenarioSpec:
    """Random Hamiltonian on an N-dimensional energy shell.

    Eigenvalues are uniform on [energy, energy + delta_e]; eigenvectors form
    a Haar-random unitary. Cells are consecutive index blocks of sizes
    ``cell_ranks`` (default: all 1). The initial state is a random unit
    vector. Everything is drawn from ``numpy.random.default_rng(seed)``.
    """
    N = int(N)
    ranks = [1] * N if cell_ranks is None else [int(d) for d in cell_ranks]
    if sum(ranks) != N or min(ranks) < 1:
        raise ConfigError(f"cell ranks {ranks} must be positive and sum to N={N}")
    rng = np.random.default_rng(seed)
    E = energy + delta_e * rng.uniform(size=N)
    U = unitary_group.rvs(N, random_state=rng) if N > 1 else np.ones((1, 1), dtype=complex)
    H = (U * E) @ U.conj().T
    H = 0.5 * (H + H.conj().T)
    psi = rng.normal(size=N) + 1j * rng.normal(size=N)
    psi /= np.linalg.norm(psi)
    bounds = np.cumsum([0] + ranks)
    fam = ProjectorFamily.from_index_sets(N, [np.arange(bounds[i], bounds[i + 1])
                                              for i in range(len(ranks))])
    scale = math.sqrt(N) * delta_e / hbar
    return ScenarioSpec(
        name="ergodic",
        schedule=((0.0, math.inf, H),),
        initial_state=psi,
        families={"cells": fam},
        run_defaults={"dt": 0.05 / scale, "t1": 20.0 / scale * 10, "trajectories": 1000},
        hbar=hbar,
        meta={"energies": E, "eigenvectors": U, "ranks": np.array(ranks), "delta_e": delta_e},
    )
