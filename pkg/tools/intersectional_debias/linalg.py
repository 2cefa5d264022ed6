"""Dense linear-algebra kernels for nullspace and rowspace projections.

All functions are pure and operate on numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .config import RANK_TOL, RESIDUAL_TOL, SYMMETRY_TOL, UNIT_NORM_TOL
from .errors import DegenerateBiasError, InvalidInputError


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector with its rank."""

    matrix: np.ndarray  # d x d, symmetric and idempotent
    rank: int

    @property
    def d(self) -> int:
        return int(self.matrix.shape[0])

    @classmethod
    def identity(cls, d: int) -> "Projector":
        return cls(np.eye(d), d)


def _as_matrix(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{what} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contains non-finite entries")
    return arr


def _fix_sign(vec: np.ndarray) -> float:
    """Return +1 or -1 so that the largest-magnitude entry of sign*vec is positive."""
    idx = int(np.argmax(np.abs(vec)))
    return -1.0 if vec[idx] < 0 else 1.0


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def svd(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD m = U diag(S) V^T with a deterministic sign convention.

    Each right-singular vector is flipped so its largest-magnitude entry is
    positive; the paired left-singular vector is flipped with it.
    """
    arr = _as_matrix(m)
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    v = vt.T.copy()
    u = u.copy()
    for j in range(v.shape[1]):
        sign = _fix_sign(v[:, j])
        v[:, j] *= sign
        u[:, j] *= sign
    return u, s, v


def rank_from_singular_values(s: np.ndarray) -> int:
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def matrix_rank(m: np.ndarray) -> int:
    """Numerical rank with cutoff sigma_i > RANK_TOL * sigma_max."""
    _, s, _ = svd(m)
    return rank_from_singular_values(s)


def row_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the rowspace of w, as rows (r x d)."""
    _, s, v = svd(w)
    r = rank_from_singular_values(s)
    return v[:, :r].T


def projector_from_basis(basis: np.ndarray, d: int) -> Projector:
    """Projector onto the orthogonal complement of span(basis rows)."""
    if basis.shape[0] == 0:
        return Projector.identity(d)
    if basis.shape[0] >= d:
        return Projector(np.zeros((d, d)), 0)
    p = np.eye(d) - basis.T @ basis
    return Projector(symmetrize(p), d - basis.shape[0])


def nullspace_projector(w: np.ndarray) -> Projector:
    """Projector onto the nullspace of w (intersection of its rows' nullspaces)."""
    arr = _as_matrix(w, "weights")
    d = arr.shape[1]
    if not np.any(arr):
        return Projector.identity(d)
    return projector_from_basis(row_basis(arr), d)


def top_directions(w: np.ndarray, count: int) -> np.ndarray:
    """Leading `count` right-singular vectors of w as rows, sign-normalised."""
    arr = _as_matrix(w, "weights")
    if not np.any(arr):
        raise DegenerateBiasError("Bias matrix is zero; no direction to remove")
    _, s, v = svd(arr)
    r = rank_from_singular_values(s)
    count = max(1, min(count, r))
    return v[:, :count].T.copy()


def principal_direction(w: np.ndarray) -> np.ndarray:
    """Top right-singular vector of w."""
    return top_directions(w, 1)[0]


def rank_one_projector(v: np.ndarray) -> Projector:
    vec = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("Direction contains non-finite entries")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise InvalidInputError(f"Direction must be unit norm, got norm {norm:.12g}")
    return Projector(np.outer(vec, vec), 1)


def nullspace_of_sum(projector_sum: np.ndarray) -> Projector:
    """Projector onto the nullspace of a symmetric PSD sum of rank-one projectors."""
    m = np.asarray(projector_sum, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"Projector sum must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("Projector sum contains non-finite entries")
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > SYMMETRY_TOL:
        raise InvalidInputError(f"Projector sum is not symmetric (defect {asym:.3g})")
    d = m.shape[0]
    eigvals, eigvecs = np.linalg.eigh(symmetrize(m))
    top = float(np.max(eigvals)) if eigvals.size else 0.0
    if top <= 0:
        return Projector.identity(d)
    keep = eigvals > RANK_TOL * top
    return projector_from_basis(eigvecs[:, keep].T, d)


def gram_schmidt(v: np.ndarray, basis: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    """Remove components of v along an orthonormal basis (two passes).

    Returns the residual and its norm; the residual is unit-normalised unless
    its norm is below RESIDUAL_TOL.
    """
    residual = np.asarray(v, dtype=float).ravel().copy()
    if basis:
        b = np.vstack([np.asarray(u, dtype=float).ravel() for u in basis])
        for _ in range(2):
            residual = residual - b.T @ (b @ residual)
    norm = float(np.linalg.norm(residual))
    if norm >= RESIDUAL_TOL:
        residual = residual / norm
    return residual, norm


def projector_defects(p: np.ndarray) -> Tuple[float, float]:
    """(symmetry defect, idempotence defect) in max-abs norm."""
    m = np.asarray(p, dtype=float)
    return float(np.max(np.abs(m - m.T))), float(np.max(np.abs(m @ m - m)))
