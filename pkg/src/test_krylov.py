import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from errors import ConvergenceError
from krylov import block_krylov_eigen, gmres_solve, orthonormalize

WEIGHTS = np.linspace(0.5, 2.0, 60)
# four leading eigenvalues well separated from a clustered tail
SEPARATED = np.concatenate([[0.0, -1.0, -2.0, -3.0], -10.0 - np.arange(56) / 10.0])


def weighted(a, b):
    return float(np.sum(WEIGHTS * a * b))


def diagonal(values):
    return lambda v: values * v


def test_gmres_solves_weighted_system():
    values = np.linspace(1.0, 10.0, 60)
    rhs = np.random.default_rng(0).standard_normal(60)
    result = gmres_solve(diagonal(values), rhs, WEIGHTS, tol=1e-12, max_iter=200)
    assert np.allclose(result.solution, rhs / values, atol=1e-9)
    assert result.residual <= 1e-12
    assert 0 < result.iterations <= 60


def test_gmres_solves_non_symmetric_system():
    rng = np.random.default_rng(1)
    matrix = np.diag(np.linspace(2.0, 6.0, 60)) + 0.1 * np.triu(rng.standard_normal((60, 60)), 1)
    rhs = rng.standard_normal(60)
    result = gmres_solve(lambda v: matrix @ v, rhs, WEIGHTS, tol=1e-12, max_iter=200)
    assert np.allclose(matrix @ result.solution, rhs, atol=1e-9)


def test_gmres_on_tensor_shaped_vectors():
    rng = np.random.default_rng(2)
    rhs = rng.standard_normal((60, 2, 2))
    result = gmres_solve(lambda v: 3.0 * v, rhs, WEIGHTS, tol=1e-12)
    assert result.solution.shape == (60, 2, 2)
    assert np.allclose(result.solution, rhs / 3.0, atol=1e-10)


def test_gmres_with_deflated_kernel():
    values = np.linspace(0.0, 5.0, 60)
    rhs = np.random.default_rng(3).standard_normal(60)

    def project(v):
        out = v.copy()
        out[0] = 0.0
        return out

    result = gmres_solve(diagonal(values), rhs, WEIGHTS, tol=1e-12, max_iter=200, project=project)
    assert result.solution[0] == 0.0
    assert np.allclose(result.solution[1:], rhs[1:] / values[1:], atol=1e-9)


def test_gmres_zero_rhs():
    result = gmres_solve(diagonal(np.ones(60)), np.zeros(60), WEIGHTS)
    assert result.iterations == 0
    assert not result.solution.any()


def test_gmres_iteration_limit():
    values = np.logspace(0, 6, 60)
    rhs = np.random.default_rng(4).standard_normal(60)
    with pytest.raises(ConvergenceError):
        gmres_solve(diagonal(values), rhs, WEIGHTS, tol=1e-14, max_iter=3)


def test_orthonormalize_drops_dependent_vectors():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(60), rng.standard_normal(60)
    basis = orthonormalize([a, b, a + 2 * b], [], weighted)
    assert len(basis) == 2
    gram = np.array([[weighted(p, q) for q in basis] for p in basis])
    assert np.allclose(gram, np.eye(2), atol=1e-12)


def test_block_krylov_finds_leading_eigenvalues():
    values = SEPARATED
    rng = np.random.default_rng(4)
    start = [rng.standard_normal(60) for _ in range(3)]
    result = block_krylov_eigen(diagonal(values), start, weighted, count=3, max_dim=60, tol=1e-8)
    assert np.allclose(result.values, [0.0, -1.0, -2.0], atol=1e-8)
    assert result.converged.all()
    assert result.asymmetry < 1e-12
    assert np.all(np.diff(result.values) <= 0)


def test_block_krylov_respects_projection():
    values = SEPARATED

    def project(v):
        out = v.copy()
        out[:2] = 0.0
        return out

    rng = np.random.default_rng(5)
    start = [rng.standard_normal(60) for _ in range(3)]
    result = block_krylov_eigen(diagonal(values), start, weighted, count=2, max_dim=60, tol=1e-8, project=project)
    assert np.allclose(result.values, [-2.0, -3.0], atol=1e-8)


def test_block_krylov_reports_asymmetry():
    rng = np.random.default_rng(6)
    matrix = np.diag(-np.arange(60, dtype=float))
    matrix[0, 1] = 0.5
    start = [rng.standard_normal(60) for _ in range(3)]
    result = block_krylov_eigen(lambda v: matrix @ v, start, lambda a, b: float(a @ b), count=1, max_dim=60,
                                tol=1.0)
    assert result.asymmetry > 0


def test_block_krylov_non_convergence():
    values = np.random.default_rng(7).standard_normal(60)
    rng = np.random.default_rng(8)
    start = [rng.standard_normal(60) for _ in range(3)]
    with pytest.raises(ConvergenceError):
        block_krylov_eigen(diagonal(values), start, weighted, count=1, max_dim=4, max_restarts=0, tol=1e-12)
