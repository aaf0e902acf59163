"""Dense linear algebra on finite-dimensional Hilbert spaces.

Composite index convention, used everywhere in the package: for a product
space A (x) B, basis element (i_a, i_b) lives at flat index i_a * dim_B + i_b
(row-major, the same ordering as ``numpy.kron``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import MAX_DIM, check_dim, check_hermitian, check_square, check_state
from .exceptions import ConfigError, NumericalError, ShapeError, SizeError

__all__ = [
    "tensor_product",
    "Propagator",
    "propagator_build",
    "Evolver",
    "partial_trace",
    "SchmidtDecomposition",
    "schmidt_decompose",
    "expectation",
]


def tensor_product(a, b, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product of two states or two operators."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise ShapeError("tensor_product needs two vectors or two matrices")
    dim = a.shape[0] * b.shape[0]
    if dim > max_dim:
        raise SizeError(f"product dimension {dim} exceeds the maximum of {max_dim}")
    return np.kron(a, b)


@dataclass(frozen=True)
class Propagator:
    dt: float
    unitary: np.ndarray

    @property
    def dim(self) -> int:
        return self.unitary.shape[0]

    def apply(self, psi) -> np.ndarray:
        return self.unitary @ np.asarray(psi, dtype=complex)


class Evolver:
    """Exact evolution under a fixed Hermitian H via one eigendecomposition.

    The decomposition is computed once; propagators and evolved states for any
    time are then cheap.
    """

    def __init__(self, H, hbar: float = 1.0):
        H = check_hermitian(H)
        self.hbar = float(hbar)
        self.energies, self.vectors = np.linalg.eigh(0.5 * (H + H.conj().T))

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.energies * (t / self.hbar))

    def unitary(self, t: float) -> np.ndarray:
        return (self.vectors * self.phases(t)) @ self.vectors.conj().T

    def coefficients(self, psi) -> np.ndarray:
        """Amplitudes of ``psi`` in the energy eigenbasis."""
        return self.vectors.conj().T @ np.asarray(psi, dtype=complex)

    def evolve_coefficients(self, coeffs, t: float) -> np.ndarray:
        return self.vectors @ (self.phases(t) * coeffs)

    def evolve(self, psi, t: float) -> np.ndarray:
        return self.evolve_coefficients(self.coefficients(psi), t)


def propagator_build(H, dt: float, hbar: float = 1.0) -> Propagator:
    """U = exp(-i H dt / hbar) from the Hermitian eigendecomposition of H."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not hbar > 0:
        raise ConfigError(f"hbar must be positive, got {hbar}")
    return Propagator(float(dt), Evolver(H, hbar).unitary(dt))


def _factor_index(keep) -> int:
    if keep in (0, "A", "a", "first"):
        return 0
    if keep in (1, "E", "e", "B", "b", "second"):
        return 1
    raise ShapeError(f"unknown factor selector {keep!r}")


def partial_trace(rho, dims: tuple[int, int], keep=0) -> np.ndarray:
    """Reduced density matrix on one factor of a bipartite space.

    ``keep`` selects the factor kept: 0 (or "A") for the first, 1 (or "E")
    for the second.
    """
    rho = check_square(rho)
    da, de = (int(d) for d in dims)
    if da * de != rho.shape[0]:
        raise ShapeError(f"dims {dims} do not factorize dimension {rho.shape[0]}")
    r = rho.reshape(da, de, da, de)
    if _factor_index(keep) == 0:
        return np.einsum("iaja->ij", r)
    return np.einsum("aiaj->ij", r)


@dataclass(frozen=True)
class SchmidtDecomposition:
    coefficients: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank(self) -> int:
        return self.coefficients.shape[0]

    def reassemble(self) -> np.ndarray:
        return np.einsum("k,ak,bk->ab", self.coefficients, self.left_vectors,
                         self.right_vectors).reshape(-1)


def schmidt_decompose(psi, dim_a: int, dim_e: int, eps_occ: float = 1e-12) -> SchmidtDecomposition:
    """Schmidt form of a bipartite pure state via the SVD of its coefficient matrix.

    Terms whose weight (squared coefficient) falls below ``eps_occ`` are dropped.
    Left and right vectors are returned as columns.
    """
    check_dim(dim_a)
    check_dim(dim_e)
    psi = check_state(psi)
    if psi.shape[0] != dim_a * dim_e:
        raise ShapeError(f"state of dimension {psi.shape[0]} is not {dim_a}x{dim_e}")
    u, s, vh = np.linalg.svd(psi.reshape(dim_a, dim_e), full_matrices=False)
    keep = s**2 >= eps_occ
    return SchmidtDecomposition(s[keep], u[:, keep], vh[keep].T)


def expectation(O, psi, tol: float = 1e-10) -> float:
    """<psi|O|psi>, checking that the imaginary part vanishes."""
    psi = np.asarray(psi, dtype=complex)
    O = check_square(O, psi.shape[0])
    value = np.vdot(psi, O @ psi)
    if abs(value.imag) > tol:
        raise NumericalError(f"expectation has imaginary part {value.imag:.3e}; is O Hermitian?")
    return float(value.real)
