"""Input validation helpers shared by the public modules."""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError, ShapeError, SizeError

MAX_DIM = 4096
NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-10


def check_dim(dim: int, max_dim: int | None = MAX_DIM) -> int:
    """``max_dim=None`` skips the ceiling (for paths that never build dense operators)."""
    dim = int(dim)
    if dim <= 0:
        raise ShapeError(f"dimension must be positive, got {dim}")
    if max_dim is not None and dim > max_dim:
        raise SizeError(f"dimension {dim} exceeds the maximum of {max_dim}")
    return dim


def check_state(psi, dim: int | None = None, tol: float = NORM_TOL,
                max_dim: int | None = MAX_DIM) -> np.ndarray:
    """Return ``psi`` as a complex 1-D array, checking length and unit norm."""
    arr = np.asarray(psi, dtype=complex)
    if arr.ndim != 1:
        raise ShapeError(f"state must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"state has dimension {arr.shape[0]}, expected {dim}")
    check_dim(arr.shape[0], max_dim)
    norm2 = float(np.vdot(arr, arr).real)
    if abs(norm2 - 1.0) > tol:
        raise DomainError(f"state is not normalized (norm^2 = {norm2:.3e})")
    return arr


def check_square(mat, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(mat, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"matrix has dimension {arr.shape[0]}, expected {dim}")
    check_dim(arr.shape[0])
    return arr


def check_hermitian(mat, dim: int | None = None, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``mat`` as a complex square array after an element-wise Hermiticity check."""
    arr = check_square(mat, dim)
    dev = np.max(np.abs(arr - arr.conj().T)) if arr.size else 0.0
    if dev > tol:
        raise ShapeError(f"operator is not Hermitian (max deviation {dev:.3e})")
    return arr


def check_density_matrix(rho, dim: int | None = None, psd_tol: float = 1e-9) -> np.ndarray:
    arr = check_hermitian(rho, dim)
    tr = np.trace(arr).real
    if abs(tr - 1.0) > 1e-9:
        raise DomainError(f"density matrix trace is {tr:.12g}, expected 1")
    low = np.linalg.eigvalsh(0.5 * (arr + arr.conj().T))[0]
    if low < -psd_tol:
        raise DomainError(f"density matrix has negative eigenvalue {low:.3e}")
    return arr


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value}")
    return value
