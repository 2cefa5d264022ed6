"""Projection kernels checked against independent numpy computations."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.errors import DegenerateBiasError, InvalidInputError
from intersectional_debias.linalg import (
    Projector,
    gram_schmidt,
    matrix_rank,
    nullspace_of_sum,
    nullspace_projector,
    principal_direction,
    projector_defects,
    rank_one_projector,
    svd,
    top_directions,
)


def test_svd_reconstructs_and_matches_gram_eigenvalues():
    assert np.allclose(svd(np.eye(3))[1], [1.0, 1.0, 1.0])
    _, s, v = svd(np.diag([2.0, 1.0]))
    assert np.allclose(s, [2.0, 1.0])
    assert np.allclose(v[:, 0], [1.0, 0.0])

    m = np.random.default_rng(3).standard_normal((5, 8))
    u, s, v = svd(m)
    assert np.linalg.norm(u @ np.diag(s) @ v.T - m) <= 1e-8 * np.linalg.norm(m)
    assert np.allclose(u.T @ u, np.eye(5), atol=1e-8)
    assert np.allclose(v.T @ v, np.eye(5), atol=1e-8)
    assert np.all(np.diff(s) <= 0)
    eigenvalues = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1][:5]
    assert np.allclose(s**2, eigenvalues, atol=1e-8)


def test_svd_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        svd(np.array([[1.0, np.inf]]))


def test_nullspace_projector_on_random_probe_stacks():
    """W P vanishes, rank(P) = d - rank(W) and P is an orthogonal projector."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(2, 129))
        m = int(rng.integers(1, 21))
        w = rng.standard_normal((m, d))
        proj = nullspace_projector(w)
        p = proj.matrix
        assert np.max(np.abs(w @ p)) <= 1e-8
        expected_rank = d - np.linalg.matrix_rank(w)
        assert proj.rank == expected_rank
        if expected_rank:
            assert np.linalg.matrix_rank(p) == expected_rank
        else:
            assert np.allclose(p, 0.0)
        sym, idem = projector_defects(p)
        assert sym <= 1e-8 and idem <= 1e-8


def test_nullspace_projector_rank_deficient_stack():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 10))
    proj = nullspace_projector(w)
    assert matrix_rank(w) == 2
    assert proj.rank == 8
    assert np.max(np.abs(w @ proj.matrix)) <= 1e-8


def test_nullspace_projector_of_zero_weights_is_identity():
    proj = nullspace_projector(np.zeros((3, 5)))
    assert proj.rank == 5
    assert np.array_equal(proj.matrix, np.eye(5))


def test_nullspace_projector_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        nullspace_projector(np.array([[1.0, np.nan]]))


def test_principal_direction_matches_power_iteration():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((5, 12))
    v = rng.standard_normal(12)
    gram = w.T @ w
    for _ in range(2000):
        v = gram @ v
        v /= np.linalg.norm(v)
    v *= np.sign(v[np.argmax(np.abs(v))])

    u = principal_direction(w)
    assert np.isclose(np.linalg.norm(u), 1.0)
    assert np.allclose(u, v, atol=1e-6)
    # Largest-magnitude entry is positive.
    assert u[np.argmax(np.abs(u))] > 0


def test_top_directions_are_orthonormal_rows():
    rng = np.random.default_rng(3)
    dirs = top_directions(rng.standard_normal((4, 9)), 3)
    assert dirs.shape == (3, 9)
    assert np.allclose(dirs @ dirs.T, np.eye(3), atol=1e-10)


def test_top_directions_count_is_capped_by_rank():
    w = np.outer([1.0, 2.0, 3.0], [0.0, 1.0, 0.0, 0.0])
    assert top_directions(w, 3).shape == (1, 4)


def test_top_directions_of_zero_matrix_raise():
    with pytest.raises(DegenerateBiasError):
        top_directions(np.zeros((2, 4)), 1)


def test_rank_one_projector_requires_unit_vector():
    with pytest.raises(InvalidInputError):
        rank_one_projector(np.array([1.0, 1.0]))
    proj = rank_one_projector(np.array([0.6, 0.8]))
    assert proj.rank == 1
    assert np.allclose(proj.matrix, [[0.36, 0.48], [0.48, 0.64]])


def test_nullspace_of_sum_of_orthonormal_directions():
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.standard_normal((7, 3)))
    total = sum(np.outer(q[:, j], q[:, j]) for j in range(3))
    proj = nullspace_of_sum(total)
    assert proj.rank == 4
    assert np.allclose(proj.matrix, np.eye(7) - total, atol=1e-10)


def test_nullspace_of_sum_of_non_orthogonal_directions():
    u = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.array([1.0, 1.0, 1.0, 0.0]) / np.sqrt(3.0)
    proj = nullspace_of_sum(rank_one_projector(u).matrix + rank_one_projector(v).matrix)
    assert proj.rank == 2
    stacked = np.vstack([u, v])
    _, s, vt = np.linalg.svd(stacked)
    null = vt[int(np.sum(s > 1e-10)) :]
    assert np.allclose(proj.matrix, null.T @ null, atol=1e-10)
    assert np.max(np.abs(stacked @ proj.matrix)) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_nullspace_of_sum_matches_nullspace_projector_of_stacked_directions(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 40))
    m = int(rng.integers(1, d))
    directions = rng.standard_normal((m, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    total = sum(rank_one_projector(row).matrix for row in directions)
    from_sum = nullspace_of_sum(total)
    from_stack = nullspace_projector(directions)
    assert from_sum.rank == from_stack.rank == d - m
    assert np.allclose(from_sum.matrix, from_stack.matrix, atol=1e-8)


def test_nullspace_of_sum_rejects_asymmetric_input():
    m = np.zeros((3, 3))
    m[0, 1] = 1.0
    with pytest.raises(InvalidInputError):
        nullspace_of_sum(m)


def test_nullspace_of_zero_sum_is_identity():
    proj = nullspace_of_sum(np.zeros((4, 4)))
    assert proj.rank == 4
    assert np.array_equal(proj.matrix, Projector.identity(4).matrix)


def test_gram_schmidt_removes_basis_components():
    basis = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
    residual, norm = gram_schmidt(np.array([3.0, -2.0, 4.0]), basis)
    assert np.isclose(norm, 4.0)
    assert np.allclose(residual, [0.0, 0.0, 1.0])


def test_gram_schmidt_dependent_vector_has_tiny_residual():
    basis = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
    _, norm = gram_schmidt(np.array([2.0, 5.0, 0.0]), basis)
    assert norm < 1e-8
