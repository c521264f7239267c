"""
Iterative solvers in a weighted inner product.

gmres_solve solves A x = b with scipy's restarted GMRES after scaling vectors
by the square root of the weights, so the minimised residual is the weighted
one. The discrete operators are self-adjoint only up to truncation error.

block_krylov_eigen finds the largest eigenvalues of an operator restricted to
a subspace: a restarted block Arnoldi basis with full two-pass
re-orthogonalisation, Rayleigh-Ritz on the symmetrized projected matrix and
explicit residuals for every Ritz pair.
"""
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.sparse import linalg as sparse_linalg

sys.path.append(str(Path(__file__).parent))
from errors import ConvergenceError

Vector = np.ndarray
Operator = Callable[[Vector], Vector]
Inner = Callable[[Vector, Vector], float]

GMRES_RESTART = 80
DEFLATION_THRESHOLD = 1e-10


@dataclass
class SolveResult:
    solution: Vector
    iterations: int
    residual: float


def gmres_solve(operator: Operator, rhs: Vector, measure: np.ndarray, tol: float = 1e-8,
                max_iter: int = 2000, restart: int = GMRES_RESTART, project: Optional[Operator] = None,
                label: str = "gmres") -> SolveResult:
    """
    Restarted GMRES for operator(x) = rhs, minimising the residual in the
    inner product sum_p measure_p <x_p, y_p>.

    Args:
        operator: Linear operator on arrays shaped like rhs; need not be self-adjoint.
        rhs: Right-hand side of shape (P, ...).
        measure: (P,) positive weights of the inner product.
        tol: Relative residual target.
        max_iter: Limit on inner iterations, summed over restarts.
        restart: Krylov dimension between restarts.
        project: Projection applied to the right-hand side, to every operator
            image and to the solution (deflation of a known kernel).
        label: Name used in log and error messages.

    Raises:
        ConvergenceError: the residual target is not met within max_iter.
    """
    def apply(x):
        y = operator(x)
        return project(y) if project is not None else y

    root = np.sqrt(measure).reshape((-1,) + (1,) * (rhs.ndim - 1))
    b = project(rhs) if project is not None else rhs
    b_scaled = (root * b).ravel()
    b_norm = float(np.linalg.norm(b_scaled))
    if b_norm == 0.0:
        return SolveResult(solution=np.zeros_like(rhs), iterations=0, residual=0.0)

    def matvec(y):
        return (root * apply(y.reshape(rhs.shape) / root)).ravel()

    size = b_scaled.size
    restart = max(1, min(restart, max_iter, size))
    counter = {"iterations": 0}

    def count(_):
        counter["iterations"] += 1

    x, info = sparse_linalg.gmres(
        sparse_linalg.LinearOperator((size, size), matvec=matvec, dtype=float), b_scaled,
        rtol=tol, atol=0.0, restart=restart, maxiter=max(1, math.ceil(max_iter / restart)),
        callback=count, callback_type='pr_norm',
    )
    relative = float(np.linalg.norm(b_scaled - matvec(x)) / b_norm)
    if info != 0:
        raise ConvergenceError(f"{label}: no convergence in {counter['iterations']} iterations "
                               f"(residual {relative:.2e})")
    solution = x.reshape(rhs.shape) / root
    if project is not None:
        solution = project(solution)
    logger.debug(f"{label}: converged in {counter['iterations']} iterations, residual {relative:.2e}")
    return SolveResult(solution=solution, iterations=counter["iterations"], residual=relative)


@dataclass
class EigenResult:
    """Ritz pairs, largest first."""

    values: np.ndarray
    vectors: List[Vector]
    residuals: np.ndarray
    converged: np.ndarray
    asymmetry: float
    applications: int
    restarts: int
    history: List[float] = field(default_factory=list)


def orthonormalize(candidates: Sequence[Vector], basis: List[Vector], inner: Inner) -> List[Vector]:
    """Two-pass Gram-Schmidt of candidates against basis and each other; near-dependent vectors dropped."""
    accepted: List[Vector] = []
    for c in candidates:
        v = np.array(c, dtype=float, copy=True)
        original = np.sqrt(max(inner(v, v), 0.0))
        if original == 0.0:
            continue
        for _ in range(2):
            for q in basis + accepted:
                v -= inner(q, v) * q
        length = np.sqrt(max(inner(v, v), 0.0))
        if length <= DEFLATION_THRESHOLD * original:
            continue
        accepted.append(v / length)
    return accepted


def block_krylov_eigen(operator: Operator, start: Sequence[Vector], inner: Inner, count: int,
                       max_dim: int = 40, max_restarts: int = 10, tol: float = 1e-2,
                       project: Optional[Operator] = None, label: str = "krylov") -> EigenResult:
    """
    Largest eigenvalues of the symmetrized restriction of `operator` to the range of `project`.

    Args:
        operator: Linear operator, approximately self-adjoint in `inner`.
        start: Starting block; its size is the block size.
        inner: Weighted inner product.
        count: Number of leading pairs wanted.
        max_dim: Basis size before an explicit restart.
        max_restarts: Restart limit.
        tol: Residual target ||A v - lambda v||_w / ||v||_w.
        project: Projection onto the subspace, applied to every new basis vector and image.
        label: Name used in log and error messages.

    Returns:
        EigenResult with `count` pairs (fewer if the subspace is smaller).

    Raises:
        ConvergenceError: the leading pair has not converged after max_restarts.
    """
    def apply(v):
        y = operator(v)
        return project(y) if project is not None else y

    block = [project(v) if project is not None else v for v in start]
    applications = 0
    history: List[float] = []
    result: Optional[EigenResult] = None

    for restart in range(max_restarts + 1):
        basis: List[Vector] = []
        images: List[Vector] = []
        new = orthonormalize(block, basis, inner)
        while new:
            basis.extend(new)
            fresh = [apply(v) for v in new]
            applications += len(fresh)
            images.extend(fresh)
            if len(basis) >= max_dim:
                break
            new = orthonormalize(fresh, basis, inner)
        m = len(basis)
        if m == 0:
            raise ConvergenceError(f"{label}: starting block is empty after projection")

        h = np.array([[inner(basis[i], images[j]) for j in range(m)] for i in range(m)])
        scale = max(np.linalg.norm(h), np.finfo(float).tiny)
        asymmetry = float(np.linalg.norm(h - h.T) / scale)
        all_values, all_coeffs = linalg.eigh(0.5 * (h + h.T))
        ranking = np.argsort(all_values)[::-1]

        def ritz(columns, source):
            return sum(c * q for c, q in zip(columns, source))

        wanted = ranking[:min(count, m)]
        values = all_values[wanted]
        vectors, residuals = [], []
        for j in wanted:
            v = ritz(all_coeffs[:, j], basis)
            r = ritz(all_coeffs[:, j], images) - all_values[j] * v
            vectors.append(v)
            residuals.append(np.sqrt(max(inner(r, r), 0.0) / max(inner(v, v), np.finfo(float).tiny)))
        residuals = np.asarray(residuals)
        converged = residuals <= tol
        history.append(float(residuals[0]))
        result = EigenResult(values=values, vectors=vectors, residuals=residuals, converged=converged,
                             asymmetry=asymmetry, applications=applications, restarts=restart, history=history)
        logger.info(f"{label}: restart {restart}, basis {m}, leading value {values[0]:.6f}, "
                    f"residual {residuals[0]:.2e}, converged {int(converged.sum())}/{len(converged)}")
        if converged.all() or m < max_dim:
            break
        block = [ritz(all_coeffs[:, j], basis) for j in ranking[:max(len(start), len(wanted))]]

    if not result.converged[0]:
        raise ConvergenceError(f"{label}: leading eigenpair did not converge "
                               f"(residual {result.residuals[0]:.2e} > {tol:.1e})")
    return result
