"""Coarse-grained projector families and the microstate decomposition of a state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import schur

from ._validation import MAX_DIM, check_density_matrix, check_dim, check_hermitian, check_state
from .exceptions import AlgebraError, ConfigError, NotNormalError, ShapeError

__all__ = [
    "EPS_OCC",
    "ProjectorFamily",
    "CoarseObservable",
    "MicrostateDecomposition",
    "MixedDecomposition",
    "NondegeneracyReport",
    "build_position_projectors",
    "build_coarse_observable",
    "decompose_pure",
    "decompose_mixed",
    "verify_nondegeneracy",
    "merge",
    "merge_degenerate",
    "ensemble_entropy",
    "block_projectors",
    "uN_standard_representation",
    "align_uN",
]

EPS_OCC = 1e-12
_ORTHO_TOL = 1e-10
# Components smaller than this fraction of the largest one are skipped when
# fixing the phase, so rounding noise never decides the convention.
_PHASE_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Ordered family of mutually orthogonal projectors.

    Each cell is either a 1-D integer array (an index set over the
    computational basis) or a complex ``(dim, rank)`` array whose orthonormal
    columns span the cell.
    """

    dim: int
    cells: tuple
    labels: tuple = ()
    resolution: float | None = None
    exhaustive: bool = field(default=False, init=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        # index-set cells are stored sparsely, so only explicit bases are size-limited
        indexed = all(np.asarray(c).ndim == 1 for c in self.cells)
        check_dim(self.dim, None if indexed else MAX_DIM)
        if not self.cells:
            raise ConfigError("a projector family needs at least one cell")
        cells = []
        for cell in self.cells:
            arr = np.asarray(cell)
            if arr.ndim == 1 and (arr.size == 0 or np.issubdtype(arr.dtype, np.integer)):
                arr = arr.astype(np.intp)
                if arr.size and (arr.min() < 0 or arr.max() >= self.dim):
                    raise ShapeError("cell index outside the Hilbert space")
                if len(np.unique(arr)) != arr.size:
                    raise ShapeError("cell index set contains duplicates")
            elif arr.ndim == 2 and arr.shape[0] == self.dim:
                arr = arr.astype(complex)
            else:
                raise ShapeError(f"cannot interpret cell of shape {arr.shape}")
            arr.setflags(write=False)
            cells.append(arr)
        object.__setattr__(self, "cells", tuple(cells))
        labels = tuple(self.labels) if self.labels else tuple(range(len(cells)))
        if len(labels) != len(cells):
            raise ShapeError("one label per cell is required")
        object.__setattr__(self, "labels", labels)
        self._check_orthogonality()
        object.__setattr__(self, "exhaustive", int(sum(self.ranks)) == self.dim)

    # -- structure -----------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def is_indexed(self) -> bool:
        return all(c.ndim == 1 for c in self.cells)

    @property
    def ranks(self) -> np.ndarray:
        return np.array([c.shape[0] if c.ndim == 1 else c.shape[1] for c in self.cells])

    def cell_map(self) -> np.ndarray:
        """For indexed families: cell number of every basis index (-1 if uncovered)."""
        if not self.is_indexed:
            raise ShapeError("cell_map is only defined for index-set families")
        out = np.full(self.dim, -1, dtype=np.intp)
        for i, c in enumerate(self.cells):
            out[c] = i
        return out

    def basis(self, i: int) -> np.ndarray:
        """Orthonormal columns spanning cell ``i``."""
        c = self.cells[i]
        if c.ndim == 2:
            return c
        out = np.zeros((self.dim, c.size), dtype=complex)
        out[c, np.arange(c.size)] = 1.0
        return out

    def projector(self, i: int) -> np.ndarray:
        c = self.cells[i]
        if c.ndim == 1:
            p = np.zeros((self.dim, self.dim), dtype=complex)
            p[c, c] = 1.0
            return p
        return c @ c.conj().T

    def project(self, psi, i: int) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        c = self.cells[i]
        if c.ndim == 1:
            out = np.zeros_like(psi)
            out[c] = psi[c]
            return out
        return c @ (c.conj().T @ psi)

    def project_all(self, psi) -> np.ndarray:
        """``(dim, n_cells)`` matrix whose column i is the projection onto cell i."""
        return np.stack([self.project(psi, i) for i in range(self.n_cells)], axis=1)

    def _check_orthogonality(self):
        if self.is_indexed:
            seen = np.concatenate(self.cells)
            if len(np.unique(seen)) != seen.size:
                raise ShapeError("index cells overlap")
            return
        bases = [self.basis(i) for i in range(self.n_cells)]
        stacked = np.concatenate(bases, axis=1)
        gram = stacked.conj().T @ stacked
        dev = np.max(np.abs(gram - np.eye(gram.shape[0])))
        if dev > _ORTHO_TOL:
            raise ShapeError(f"cell vectors are not orthonormal (deviation {dev:.2e})")

    # -- constructors --------------------------------------------------
    @classmethod
    def from_index_sets(cls, dim, sets, labels=(), resolution=None, meta=None):
        return cls(dim, tuple(np.asarray(s, dtype=np.intp) for s in sets), tuple(labels),
                   resolution, meta or {})

    @classmethod
    def from_bases(cls, dim, bases, labels=(), resolution=None, meta=None):
        return cls(dim, tuple(np.asarray(b, dtype=complex).reshape(dim, -1) for b in bases),
                   tuple(labels), resolution, meta or {})


@dataclass(frozen=True, eq=False)
class CoarseObservable:
    family: ProjectorFamily
    values: np.ndarray

    def operator(self) -> np.ndarray:
        op = np.zeros((self.family.dim, self.family.dim), dtype=complex)
        for i, v in enumerate(self.values):
            op += v * self.family.projector(i)
        return op

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


def build_position_projectors(grid_points: int, cells: int, domain=(0.0, 1.0),
                              boundary: str = "periodic") -> ProjectorFamily:
    """Contiguous position cells over a uniform grid.

    Grid point k sits at x_lo + (k + 1/2) * spacing, so cell boundaries fall
    halfway between neighbouring grid points.
    """
    grid_points, cells = int(grid_points), int(cells)
    if cells <= 0 or grid_points <= 0 or grid_points % cells:
        raise ConfigError(f"{grid_points} grid points cannot be split into {cells} equal cells")
    if boundary not in ("periodic", "hard-wall"):
        raise ConfigError(f"unknown boundary {boundary!r}")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ConfigError("domain must have x_hi > x_lo")
    m = grid_points // cells
    delta = (hi - lo) / cells
    labels = tuple((lo + i * delta, lo + (i + 1) * delta) for i in range(cells))
    sets = [np.arange(i * m, (i + 1) * m) for i in range(cells)]
    meta = {"kind": "position", "domain": (lo, hi), "grid_points": grid_points,
            "boundary": boundary, "spacing": (hi - lo) / grid_points}
    return ProjectorFamily.from_index_sets(grid_points, sets, labels, delta, meta)


def grid_positions(family: ProjectorFamily) -> np.ndarray:
    lo, _ = family.meta["domain"]
    h = family.meta["spacing"]
    return lo + (np.arange(family.meta["grid_points"]) + 0.5) * h


def cell_centers(family: ProjectorFamily) -> np.ndarray:
    return np.array([0.5 * (lo + hi) for lo, hi in family.labels])


def build_coarse_observable(family: ProjectorFamily, lambda0: float, delta: float) -> CoarseObservable:
    """Midpoint values lambda0 + (i - 1/2) delta for cells numbered from 1."""
    i = np.arange(1, family.n_cells + 1)
    return CoarseObservable(family, lambda0 + (i - 0.5) * delta)


def _phase_of_first(v: np.ndarray) -> complex:
    mags = np.abs(v)
    k = int(np.argmax(mags > _PHASE_FLOOR * mags.max()))
    return v[k] / mags[k]


def _split(v: np.ndarray, eps_occ: float):
    """Split a projected vector into (amplitude, unit microstate) under the phase convention."""
    w = float(np.vdot(v, v).real)
    if w < eps_occ or w == 0.0:
        return 0.0j, np.zeros_like(v), False
    norm = np.sqrt(w)
    ph = _phase_of_first(v)
    return norm * ph, v / (norm * ph), True


@dataclass(frozen=True, eq=False)
class MicrostateDecomposition:
    """Amplitudes and orthonormal microstates of a state relative to a family.

    Slot ``k`` holds amplitude ``amplitudes[k]`` and vector
    ``microstates[:, k]``; unoccupied slots carry zeros. ``cell_index[k]``
    lists the family cells merged into slot ``k``.
    """

    amplitudes: np.ndarray
    microstates: np.ndarray
    occupied: np.ndarray
    cell_index: tuple
    eps_occ: float = EPS_OCC
    info: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occupied))

    @property
    def n_slots(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def dim(self) -> int:
        return self.microstates.shape[0]

    def projected(self) -> np.ndarray:
        """Columns c_k |Psi_k>, i.e. the projections of the state."""
        return self.microstates * self.amplitudes

    def reconstruct(self) -> np.ndarray:
        return self.microstates @ self.amplitudes


def _from_projections(V: np.ndarray, cell_index, eps_occ: float, info=None) -> MicrostateDecomposition:
    n = V.shape[1]
    amps = np.zeros(n, dtype=complex)
    states = np.zeros_like(V)
    occ = np.zeros(n, dtype=bool)
    for k in range(n):
        amps[k], states[:, k], occ[k] = _split(V[:, k], eps_occ)
    return MicrostateDecomposition(amps, states, occ, tuple(cell_index), eps_occ, info or {})


def decompose_pure(psi, family: ProjectorFamily, eps_occ: float = EPS_OCC) -> MicrostateDecomposition:
    """One microstate per occupied cell: |Psi_i> proportional to Pi_i |Psi>."""
    psi = check_state(psi, family.dim)
    return _from_projections(family.project_all(psi), [(i,) for i in range(family.n_cells)], eps_occ)


@dataclass(frozen=True, eq=False)
class MixedDecomposition:
    """Cell blocks of a density matrix.

    ``weights[i]`` is Tr(Pi_i rho Pi_i); ``blocks[i]`` is the normalized
    diagonal block (None when unoccupied). Off-diagonal blocks
    B_ij = Pi_i rho Pi_j are kept unnormalized and produced on demand.
    """

    rho: np.ndarray
    family: ProjectorFamily
    weights: np.ndarray
    blocks: tuple
    eps_occ: float = EPS_OCC

    @property
    def occupied(self) -> np.ndarray:
        return self.weights >= self.eps_occ

    def offdiagonal(self, i: int, j: int) -> np.ndarray:
        return self.family.projector(i) @ self.rho @ self.family.projector(j)


def decompose_mixed(rho, family: ProjectorFamily, eps_occ: float = EPS_OCC) -> MixedDecomposition:
    rho = check_density_matrix(rho, family.dim)
    weights = np.zeros(family.n_cells)
    blocks = []
    for i in range(family.n_cells):
        p = family.projector(i)
        b = p @ rho @ p
        weights[i] = np.trace(b).real
        blocks.append(b / weights[i] if weights[i] >= eps_occ else None)
    return MixedDecomposition(rho, family, weights, tuple(blocks), eps_occ)


@dataclass(frozen=True)
class NondegeneracyReport:
    degenerate_pairs: tuple
    checked_pairs: int

    @property
    def ok(self) -> bool:
        return not self.degenerate_pairs


def _as_operator(obs):
    if isinstance(obs, CoarseObservable):
        return obs.operator(), obs.norm
    op = check_hermitian(obs)
    return op, float(np.linalg.norm(op, 2))


def verify_nondegeneracy(decomp: MicrostateDecomposition, observables: Sequence,
                         tol: float = 1e-8) -> NondegeneracyReport:
    """Find occupied pairs that no observable tells apart.

    A pair (k, l) is degenerate for an observable O when the 2x2 block of O on
    {Psi_k, Psi_l} equals mu * identity (mu = <Psi_k|O|Psi_k>) within
    ``tol * ||O||``. A pair is reported when this holds for every observable.
    """
    ops = [_as_operator(o) for o in observables]
    slots = np.flatnonzero(decomp.occupied)
    X = decomp.microstates[:, slots]
    blocks = [(X.conj().T @ op @ X, nrm) for op, nrm in ops]
    pairs = []
    for a in range(len(slots)):
        for b in range(a + 1, len(slots)):
            idx = [a, b]
            degenerate = True
            for M, nrm in blocks:
                sub = M[np.ix_(idx, idx)]
                mu = sub[0, 0]
                if np.max(np.abs(sub - mu * np.eye(2))) > tol * nrm:
                    degenerate = False
                    break
            if degenerate:
                pairs.append((int(slots[a]), int(slots[b])))
    n = len(slots)
    return NondegeneracyReport(tuple(pairs), n * (n - 1) // 2)


def merge(decomp: MicrostateDecomposition, k: int, l: int) -> MicrostateDecomposition:
    """Replace slots k and l by the normalized combination c_k|Psi_k> + c_l|Psi_l>."""
    if k == l:
        raise ValueError("cannot merge a slot with itself")
    V = decomp.projected()
    V[:, k] = V[:, k] + V[:, l]
    keep = [s for s in range(decomp.n_slots) if s != l]
    cells = list(decomp.cell_index)
    cells[k] = tuple(sorted(cells[k] + cells[l]))
    return _from_projections(V[:, keep], [cells[s] for s in keep], decomp.eps_occ, decomp.info)


def merge_degenerate(decomp: MicrostateDecomposition, report: NondegeneracyReport) -> MicrostateDecomposition:
    """Merge every group of slots connected by degenerate pairs."""
    parent = list(range(decomp.n_slots))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, l in report.degenerate_pairs:
        rk, rl = find(k), find(l)
        if rk != rl:
            parent[max(rk, rl)] = min(rk, rl)
    roots = sorted({find(s) for s in range(decomp.n_slots)})
    V = decomp.projected()
    cols, cells = [], []
    for r in roots:
        members = [s for s in range(decomp.n_slots) if find(s) == r]
        cols.append(V[:, members].sum(axis=1))
        cells.append(tuple(sorted(c for s in members for c in decomp.cell_index[s])))
    return _from_projections(np.stack(cols, axis=1), cells, decomp.eps_occ, decomp.info)


def ensemble_entropy(decomp_or_weights) -> float:
    """Shannon entropy (natural log) of the microstate weights."""
    w = decomp_or_weights.weights if isinstance(decomp_or_weights, MicrostateDecomposition) \
        else np.asarray(decomp_or_weights, dtype=float)
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


def _merge_labels(a, b):
    if isinstance(a, tuple) and isinstance(b, tuple) and len(a) == len(b) == 2:
        return (a[0], b[1])
    return (a, b)


def block_projectors(family: ProjectorFamily) -> ProjectorFamily:
    """Pair neighbouring cells (0+1, 2+3, ...) into cells of doubled resolution."""
    n = family.n_cells
    if n % 2:
        raise ConfigError(f"blocking needs an even cell count, got {n}")
    labels = [_merge_labels(family.labels[2 * i], family.labels[2 * i + 1]) for i in range(n // 2)]
    res = None if family.resolution is None else 2 * family.resolution
    meta = dict(family.meta, blocked=True)
    if family.is_indexed:
        sets = [np.concatenate([family.cells[2 * i], family.cells[2 * i + 1]]) for i in range(n // 2)]
        return ProjectorFamily.from_index_sets(family.dim, sets, labels, res, meta)
    bases = [np.concatenate([family.basis(2 * i), family.basis(2 * i + 1)], axis=1) for i in range(n // 2)]
    return ProjectorFamily.from_bases(family.dim, bases, labels, res, meta)


# -- u(N) alignment demonstrator -------------------------------------------

def uN_standard_representation(N: int, extra: int = 0):
    """Generators E_ij (x) 1 on C^N (x) C^N, padded by ``extra`` inert dimensions.

    Returns ``(generators, pair_basis)`` with shapes ``(N, N, D, D)`` and
    ``(N, N, D)``, D = N*N + extra, where ``pair_basis[k, l]`` is |kl>.
    """
    D = N * N + extra
    gens = np.zeros((N, N, D, D), dtype=complex)
    pairs = np.zeros((N, N, D), dtype=complex)
    for k in range(N):
        for l in range(N):
            pairs[k, l, k * N + l] = 1.0
    for i in range(N):
        for j in range(N):
            for l in range(N):
                gens[i, j, i * N + l, j * N + l] = 1.0
    return gens, pairs


def _check_algebra(gens: np.ndarray, tol: float):
    N = gens.shape[0]
    for i in range(N):
        for j in range(N):
            for k in range(N):
                for l in range(N):
                    lhs = gens[i, j] @ gens[k, l] - gens[k, l] @ gens[i, j]
                    rhs = np.zeros_like(lhs)
                    if j == k:
                        rhs = rhs + gens[i, l]
                    if i == l:
                        rhs = rhs - gens[k, j]
                    if np.max(np.abs(lhs - rhs)) > tol:
                        raise AlgebraError(f"commutator [O_{i}{j}, O_{k}{l}] violates the u(N) relations")


def align_uN(psi, generators, pair_basis, tol: float = 1e-8) -> MicrostateDecomposition:
    """Rotate a u(N) family so the state is diagonal on its adjoint block.

    The state's coefficient matrix M_kl = <kl|Psi> must be normal; a unitary
    Z with M = Z diag(d) Z^dagger then yields aligned pair states
    |kk>' = sum_ab Z_ak conj(Z_bk) |ab> with amplitudes d_k. The remainder
    orthogonal to the adjoint block becomes slot N. The rotation is stored in
    ``info["rotation"]``.
    """
    gens = np.asarray(generators, dtype=complex)
    pairs = np.asarray(pair_basis, dtype=complex)
    N = gens.shape[0]
    if gens.shape[:2] != (N, N) or pairs.shape[:2] != (N, N):
        raise ShapeError("generators and pair basis must be indexed by (N, N)")
    psi = check_state(psi, gens.shape[2])
    _check_algebra(gens, tol)
    flat = pairs.reshape(N * N, -1)
    if np.max(np.abs(flat.conj() @ flat.T - np.eye(N * N))) > tol:
        raise AlgebraError("pair basis is not orthonormal")
    for i in range(N):
        for j in range(N):
            moved = np.einsum("ab,klb->kla", gens[i, j], pairs)
            expect = np.zeros_like(pairs)
            expect[j] = pairs[i]  # O_ij |jl> = |il>
            if np.max(np.abs(moved - expect)) > tol:
                raise AlgebraError("pair basis does not carry the adjoint action")

    M = pairs.conj().reshape(N * N, -1) @ psi
    M = M.reshape(N, N)
    scale = max(1.0, float(np.linalg.norm(M)) ** 2)
    if np.max(np.abs(M @ M.conj().T - M.conj().T @ M)) > tol * scale:
        raise NotNormalError("coefficient matrix on the adjoint block is not normal")
    if np.allclose(M, np.diag(np.diag(M)), atol=tol):
        Z, d = np.eye(N, dtype=complex), np.diag(M).copy()
    else:
        T, Z = schur(M, output="complex")
        d = np.diag(T).copy()
    aligned = np.einsum("ak,bk,abx->kx", Z, Z.conj(), pairs)
    rot_gens = np.einsum("ai,bj,abxy->ijxy", Z, Z.conj(), gens)

    remainder = psi - pairs.reshape(N * N, -1).T @ M.reshape(-1)
    V = np.concatenate([(aligned * d[:, None]).T, remainder[:, None]], axis=1)
    decomp = _from_projections(V, [(k,) for k in range(N + 1)], EPS_OCC,
                               {"rotation": Z, "generators": rot_gens})
    for i in range(N):
        for j in range(N):
            if not decomp.occupied[j]:
                continue
            out = rot_gens[i, i] @ decomp.microstates[:, j]
            target = decomp.microstates[:, j] if i == j else 0.0
            if np.max(np.abs(out - target)) > 1e3 * tol:
                raise AlgebraError("aligned states are not Cartan eigenstates")
    return decomp
