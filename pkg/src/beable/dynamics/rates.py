"""Transition rates between microstates and master-equation checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .._validation import check_hermitian, check_state
from ..exceptions import ConfigError, ShapeError, StarvationError
from ..microstates import EPS_OCC, MicrostateDecomposition, MixedDecomposition, ProjectorFamily

__all__ = [
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
]


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Jump rates ``rates[i, j]`` from slot j to slot i (zero diagonal)."""

    rates: np.ndarray
    weights: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.rates.shape[0]

    def out_rates(self) -> np.ndarray:
        return self.rates.sum(axis=0)

    def generator(self) -> np.ndarray:
        """Master-equation generator Q with Q_ij = T_ij and columns summing to zero."""
        return self.rates - np.diag(self.out_rates())

    def flow(self) -> np.ndarray:
        """Right-hand side sum_j (T_ij w_j - T_ji w_i) of the master equation."""
        if self.weights is None:
            raise ValueError("rate matrix carries no weights")
        return self.generator() @ self.weights


def _rates_from_gram(G: np.ndarray, weights: np.ndarray, occupied: np.ndarray,
                     hbar: float) -> np.ndarray:
    """T_ij = max(-(2/hbar) Im G_ji, 0) / w_j from G_ji = <v_j|X|v_i>, v_i = c_i Psi_i.

    G is Hermitized first so that Im G is exactly antisymmetric; this makes the
    one-way property hold bit-for-bit after the clamp.
    """
    G = 0.5 * (G + G.conj().T)
    flux = np.maximum(-(2.0 / hbar) * G.imag.T, 0.0)
    occ = occupied.astype(bool)
    T = np.zeros_like(flux)
    safe = np.where(occ, weights, 1.0)
    T[:, occ] = flux[:, occ] / safe[occ]
    T[~occ, :] = 0.0
    np.fill_diagonal(T, 0.0)
    return T


def _check_sources(weights, occupied, eps):
    low = occupied & (weights < eps)
    if np.any(low):
        raise StarvationError(f"occupied slots {np.flatnonzero(low).tolist()} have weight below {eps}")


def rates_pure(decomp: MicrostateDecomposition, H, hbar: float = 1.0) -> RateMatrix:
    """Rates T_ij = max(-(2/hbar) Im[(c_i/c_j) <Psi_j|H|Psi_i>], 0)."""
    H = check_hermitian(H, decomp.dim)
    w = decomp.weights
    _check_sources(w, decomp.occupied, decomp.eps_occ)
    V = decomp.projected()
    G = V.conj().T @ H @ V
    return RateMatrix(_rates_from_gram(G, w, decomp.occupied, hbar), w)


def rates_timedep(now: MicrostateDecomposition, nxt: MicrostateDecomposition, H, dt: float,
                  hbar: float = 1.0) -> RateMatrix:
    """Rates for a time-dependent family.

    The microstate derivative is the forward difference
    <Psi_j(t)|Psi_i(t+dt)>/dt, so the result converges at first order in dt.
    """
    if now.n_slots != nxt.n_slots or tuple(now.cell_index) != tuple(nxt.cell_index):
        raise ConfigError("decompositions do not share a cell indexing")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    H = check_hermitian(H, now.dim)
    w = now.weights
    _check_sources(w, now.occupied, now.eps_occ)
    V = now.projected()
    G = V.conj().T @ H @ V
    X = now.microstates.conj().T @ nxt.microstates
    c = now.amplitudes
    G = G - 1j * hbar * (c.conj()[:, None] * X * c[None, :]) / dt
    return RateMatrix(_rates_from_gram(G, w, now.occupied, hbar), w)


def rates_mixed(mixed: MixedDecomposition, H, hbar: float = 1.0) -> RateMatrix:
    """Rates T_ij = max((2/hbar) Im Tr_i([H, B_ij]) / A_jj, 0), B_ij = Pi_i rho Pi_j."""
    fam = mixed.family
    H = check_hermitian(H, fam.dim)
    n = fam.n_cells
    P = [fam.projector(i) for i in range(n)]
    X = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            B = P[i] @ mixed.rho @ P[j]
            X[i, j] = np.trace(P[i] @ (H @ B - B @ H))
    # Im X is antisymmetric in exact arithmetic; enforce it before clamping.
    im = 0.5 * (X.imag - X.imag.T)
    occ = mixed.occupied
    flux = np.maximum((2.0 / hbar) * im, 0.0)
    T = np.zeros((n, n))
    T[:, occ] = flux[:, occ] / mixed.weights[occ]
    T[~occ, :] = 0.0
    np.fill_diagonal(T, 0.0)
    return RateMatrix(T, mixed.weights.copy())


def particle_rates_current(psi_grid, family: ProjectorFamily, mass: float, hbar: float = 1.0,
                           eps_occ: float = EPS_OCC, strict: bool = False) -> RateMatrix:
    """Nearest-neighbour hopping rates from the probability current at cell boundaries.

    ``psi_grid`` holds grid amplitudes normalized so that sum |psi_k|^2 = 1,
    i.e. psi_k = Psi(x_k) sqrt(spacing). At the boundary between grid points
    k-1 and k the current Im[Psi* dPsi/dx] is taken from the central
    difference at the midpoint, which reduces to Im[conj(psi_{k-1}) psi_k] /
    spacing^2. This is the exact lattice current of the 3-point kinetic
    operator, so the result coincides with ``rates_pure`` for that
    Hamiltonian.

    With ``strict=True`` a positive current out of an unoccupied cell raises
    StarvationError instead of being dropped.
    """
    if family.meta.get("kind") != "position":
        raise ConfigError("particle_rates_current needs a position-cell family")
    psi = check_state(psi_grid, family.dim, max_dim=None)
    h = family.meta["spacing"]
    n_grid = family.dim
    cmap = family.cell_map()
    left = np.arange(n_grid - 1)
    if family.meta["boundary"] == "periodic":
        left = np.arange(n_grid)
    right = (left + 1) % n_grid
    cross = cmap[left] != cmap[right]
    left, right = left[cross], right[cross]
    current = np.imag(psi[left].conj() * psi[right]) / h**2
    n = family.n_cells
    net = np.zeros((n, n))
    np.add.at(net, (cmap[right], cmap[left]), current)
    np.add.at(net, (cmap[left], cmap[right]), -current)
    w = np.bincount(cmap, weights=np.abs(psi) ** 2, minlength=n)
    occ = w >= eps_occ
    flux = np.maximum((hbar / mass) * net, 0.0)
    if strict and np.any(flux[:, ~occ] > 0):
        raise StarvationError("current leaves an unoccupied cell")
    T = np.zeros((n, n))
    T[:, occ] = flux[:, occ] / w[occ]
    T[~occ, :] = 0.0
    np.fill_diagonal(T, 0.0)
    return RateMatrix(T, w)


def marginal_rates(joint, joint_weights, shape: tuple[int, int], side: str = "A",
                   eps_occ: float = EPS_OCC) -> RateMatrix:
    """Rates of one factor of a product-labelled process.

    Joint slot (i1, i2) sits at flat index i1 * shape[1] + i2. For side "A":
    T^A_{i1 j1} = sum_{i2, j2} T_{(i1 i2),(j1 j2)} w_{j1 j2} / w_{j1}, with
    i1 != j1. A marginal source of zero weight gets a zero column unless flow
    leaves it, which raises StarvationError.
    """
    T = joint.rates if isinstance(joint, RateMatrix) else np.asarray(joint, dtype=float)
    w = np.asarray(joint_weights, dtype=float)
    n1, n2 = shape
    if T.shape != (n1 * n2, n1 * n2) or w.shape != (n1 * n2,):
        raise ShapeError("joint rates and weights do not match the declared factor shape")
    T4 = T.reshape(n1, n2, n1, n2)
    w2 = w.reshape(n1, n2)
    if side in ("A", "a", 0):
        flux = np.einsum("abcd,cd->ac", T4, w2)
        wm = w2.sum(axis=1)
    elif side in ("B", "b", 1):
        flux = np.einsum("abcd,cd->bd", T4, w2)
        wm = w2.sum(axis=0)
    else:
        raise ConfigError(f"unknown side {side!r}")
    np.fill_diagonal(flux, 0.0)
    occ = wm >= eps_occ
    if np.any(flux[:, ~occ] > 0):
        raise StarvationError("flow leaves a marginal cell of zero weight")
    out = np.zeros_like(flux)
    out[:, occ] = flux[:, occ] / wm[occ]
    return RateMatrix(out, wm)


def blocked_rate_sum(fine: RateMatrix, fine_weights=None) -> RateMatrix:
    """Coarse rates from fine ones when cells 2i and 2i+1 are paired.

    T'_ij = (1/w'_j) sum over a in block i, b in block j of T_ab w_b. This
    equals the rates computed directly on the blocked family whenever, for
    each pair of blocks, all fine flows between them share one direction (for
    instance nearest-neighbour chains).
    """
    w = np.asarray(fine.weights if fine_weights is None else fine_weights, dtype=float)
    n = fine.count
    if n % 2:
        raise ConfigError("blocking needs an even number of slots")
    flux = (fine.rates * w[None, :]).reshape(n // 2, 2, n // 2, 2).sum(axis=(1, 3))
    wb = w.reshape(n // 2, 2).sum(axis=1)
    np.fill_diagonal(flux, 0.0)
    out = np.zeros_like(flux)
    occ = wb > 0
    out[:, occ] = flux[:, occ] / wb[occ]
    return RateMatrix(out, wb)


class RateKernel:
    """Fast repeated rate evaluation for one family.

    For index-set families only the Hamiltonian entries that connect two
    different cells matter; they are extracted once per Hamiltonian by
    ``prepare`` so each evaluation costs O(number of such entries).
    """

    def __init__(self, family: ProjectorFamily, hbar: float = 1.0, eps_occ: float = EPS_OCC):
        self.family = family
        self.hbar = float(hbar)
        self.eps_occ = float(eps_occ)
        self.n = family.n_cells
        if family.is_indexed:
            self._cmap = family.cell_map()
            self._covered = self._cmap >= 0
        self._prepared: dict[int, object] = {}

    def prepare(self, H):
        key = id(H)
        hit = self._prepared.get(key)
        if hit is not None and hit[0] is H:
            return hit[1]
        if self.family.is_indexed:
            rows, cols = np.nonzero(H)
            a, b = self._cmap[rows], self._cmap[cols]
            keep = (a >= 0) & (b >= 0) & (a != b)
            rows, cols = rows[keep], cols[keep]
            prep = (rows, cols, H[rows, cols], a[keep] * self.n + b[keep])
        else:
            prep = np.asarray(H, dtype=complex)
        self._prepared[key] = (H, prep)
        return prep

    def weights(self, psi) -> np.ndarray:
        if self.family.is_indexed:
            return np.bincount(self._cmap[self._covered], weights=np.abs(psi[self._covered]) ** 2,
                               minlength=self.n)
        V = self.family.project_all(psi)
        return np.sum(np.abs(V) ** 2, axis=0)

    def gram(self, psi, prep) -> np.ndarray:
        n = self.n
        if self.family.is_indexed:
            rows, cols, vals, pair = prep
            z = psi[rows].conj() * vals * psi[cols]
            G = (np.bincount(pair, weights=z.real, minlength=n * n)
                 + 1j * np.bincount(pair, weights=z.imag, minlength=n * n))
            return G.reshape(n, n)
        V = self.family.project_all(psi)
        return V.conj().T @ prep @ V

    def rates(self, psi, prep):
        """Return ``(T, weights)`` for state ``psi`` under the prepared Hamiltonian."""
        w = self.weights(psi)
        T = _rates_from_gram(self.gram(psi, prep), w, w >= self.eps_occ, self.hbar)
        return T, w


@dataclass(frozen=True)
class LocalityReport:
    environment_offdiagonal: float
    rate_deviation_local: float
    rate_deviation_swapped: float

    def ok(self, tol: float = 1e-9) -> bool:
        return max(self.environment_offdiagonal, self.rate_deviation_local,
                   self.rate_deviation_swapped) <= tol


def _lift(family: ProjectorFamily, dim_e: int) -> ProjectorFamily:
    if family.is_indexed:
        sets = [np.concatenate([np.arange(a * dim_e, (a + 1) * dim_e) for a in cell])
                for cell in family.cells]
        return ProjectorFamily.from_index_sets(family.dim * dim_e, sets, family.labels)
    eye = np.eye(dim_e)
    bases = [np.kron(family.basis(i), eye) for i in range(family.n_cells)]
    return ProjectorFamily.from_bases(family.dim * dim_e, bases, family.labels)


def locality_audit(psi, family: ProjectorFamily, H_A, H_E, H_int, hbar: float = 1.0,
                   seed: int | None = 0) -> LocalityReport:
    """Check that the environment Hamiltonian never enters the rates.

    ``family`` acts on factor A. The full Hamiltonian is
    H_A (x) 1 + 1 (x) H_E + H_int on A (x) E. A random Hermitian H_E' drawn
    from ``seed`` replaces H_E for the swap comparison.
    """
    from ..microstates import decompose_pure

    H_A = check_hermitian(H_A)
    H_E = check_hermitian(H_E)
    da, de = H_A.shape[0], H_E.shape[0]
    if family.dim != da:
        raise ConfigError(f"family acts on dimension {family.dim}, factor A has {da}")
    H_int = check_hermitian(H_int)
    if H_int.shape[0] != da * de:
        raise ConfigError("interaction Hamiltonian does not act on A (x) E")
    psi = check_state(psi, da * de)
    lifted = _lift(family, de)
    decomp = decompose_pure(psi, lifted)
    env = np.kron(np.eye(da), H_E)
    X = decomp.microstates[:, decomp.occupied]
    M = X.conj().T @ env @ X
    offdiag = float(np.max(np.abs(M - np.diag(np.diag(M))))) if M.size else 0.0
    local = np.kron(H_A, np.eye(de)) + H_int
    full = rates_pure(decomp, local + env, hbar).rates
    without = rates_pure(decomp, local, hbar).rates
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(de, de)) + 1j * rng.normal(size=(de, de))
    swapped = rates_pure(decomp, local + np.kron(np.eye(da), A + A.conj().T), hbar).rates
    return LocalityReport(offdiag, float(np.max(np.abs(full - without))),
                          float(np.max(np.abs(full - swapped))))


def master_residual(decomps: Sequence, times, H, hbar: float = 1.0) -> float:
    """Largest mismatch between d|c_i|^2/dt and the master-equation flow.

    The time derivative uses centered differences on the (uniform) ``times``
    grid, evaluated at every interior point. ``H`` may be a matrix or a
    callable of time. Mixed decompositions are handled with ``rates_mixed``.
    """
    times = np.asarray(times, dtype=float)
    if len(decomps) != times.size or times.size < 3:
        raise ShapeError("need at least three decompositions with matching times")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise ShapeError("times must be uniformly spaced")
    dt = steps[0]
    Hf: Callable = H if callable(H) else (lambda t: H)
    W = np.stack([d.weights for d in decomps])
    rate_fn = rates_mixed if isinstance(decomps[0], MixedDecomposition) else rates_pure
    worst = 0.0
    for k in range(1, times.size - 1):
        lhs = (W[k + 1] - W[k - 1]) / (2 * dt)
        rhs = rate_fn(decomps[k], Hf(times[k]), hbar).flow()
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
