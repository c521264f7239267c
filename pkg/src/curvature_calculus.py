"""
Curvature of zoo metrics and covariant differentiation of tensor fields.

Fields are differentiated in the analytic orthonormal frame of each chart:
components are taken to the frame, differentiated with the chart stencils
(seam ghosts rotated from the neighbour's frame), corrected by the frame
connection and returned to chart components. A parallel tensor therefore has
constant frame components and a covariant derivative that vanishes to
round-off.

Index conventions: R_ijkl = K(g_ik g_jl - g_il g_jk) on a space form, so
g^{jl} R_ijkl = R_ik and the commutator of covariant derivatives on 1-forms is
nabla_i nabla_j w_k - nabla_j nabla_i w_k = R_ijkl w^l.
"""
import sys
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError, NumericalCheckError
from grid_geometry import ChartedGrid, Factor, TensorField

CURVATURE_MODES = ("closed-form", "finite-difference")
METRIC_MATCH_TOLERANCE = 1e-10
RELATIVE_EPSILON = 1e-30


def _each_slot(array: np.ndarray, first_slot: int, op: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply op to every tensor slot from first_slot on, the slot moved to the last axis."""
    for s in range(first_slot, array.ndim):
        array = np.moveaxis(op(np.moveaxis(array, s, -1)), -1, s)
    return array


def _slot_sum(array: np.ndarray, first_slot: int, op: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Sum over tensor slots of op acting on that slot alone; zero when there are no slots."""
    out = np.zeros_like(array)
    for s in range(first_slot, array.ndim):
        out += np.moveaxis(op(np.moveaxis(array, s, -1)), -1, s)
    return out


def symmetrize(array: np.ndarray) -> np.ndarray:
    return 0.5 * (array + np.swapaxes(array, -1, -2))


class FrameCalculus:
    """
    Covariant differential operators on frame components of one grid.

    Arrays have shape (P, n, ..., n); all methods are pure.
    """

    def __init__(self, grid: ChartedGrid):
        self.grid = grid
        self.n = grid.dimension
        self.frame = grid.frame
        self.coframe = grid.coframe
        self.connection = grid.connection
        self.rotation = grid.ghost_rotation

    # frame <-> chart components

    def to_frame(self, comps: np.ndarray) -> np.ndarray:
        return _each_slot(comps, 1, lambda x: np.einsum('pab,p...a->p...b', self.frame, x))

    def to_chart(self, comps: np.ndarray) -> np.ndarray:
        return _each_slot(comps, 1, lambda x: np.einsum('pba,p...b->p...a', self.coframe, x))

    # point layout along one factor

    def _to_factor_layout(self, array: np.ndarray, k: int) -> np.ndarray:
        rest = array.shape[1:]
        moved = np.moveaxis(array.reshape(self.grid.point_shape + rest), k, 0)
        return moved.reshape((moved.shape[0], -1) + rest)

    def _from_factor_layout(self, array: np.ndarray, k: int) -> np.ndarray:
        shape = self.grid.point_shape
        other = shape[:k] + shape[k + 1:]
        rest = array.shape[2:]
        restored = np.moveaxis(array.reshape((shape[k],) + other + rest), 0, k)
        return restored.reshape((self.grid.npts,) + rest)

    def _difference(self, array: np.ndarray, axis: int, second: bool) -> np.ndarray:
        k, local = self.grid.axes[axis]
        fac: Factor = self.grid.factors[k]
        y = self._to_factor_layout(array, k)
        flat = y.reshape(y.shape[0], -1)
        interior = fac.second_derivative if second else fac.derivative
        out = interior[local] @ flat
        if fac.has_ghosts(local):
            ghost = (fac.ghost_interp[local] @ flat).reshape((-1,) + y.shape[1:])
            rot = self.rotation[axis]
            ghost = _each_slot(ghost, 2, lambda x: np.einsum('gij,g...j->g...i', rot, x))
            stencil = fac.ghost_second if second else fac.ghost_derivative
            out = out + stencil[local] @ ghost.reshape(ghost.shape[0], -1)
        return self._from_factor_layout(out.reshape(y.shape), k)

    def partial(self, array: np.ndarray, axis: int) -> np.ndarray:
        """Centred difference of frame components along a global chart axis."""
        return self._difference(array, axis, second=False)

    def second_partial(self, array: np.ndarray, axis: int) -> np.ndarray:
        """Three-point second difference of frame components along a global chart axis."""
        return self._difference(array, axis, second=True)

    @staticmethod
    def _act(conn: np.ndarray, array: np.ndarray) -> np.ndarray:
        return _slot_sum(array, 1, lambda x: np.einsum('pcb,p...c->p...b', conn, x))

    def connection_term(self, array: np.ndarray, axis: int) -> np.ndarray:
        """Sum over slots of omega_axis acting on that slot."""
        return self._act(self.connection[axis], array)

    def covariant_partial(self, array: np.ndarray, axis: int) -> np.ndarray:
        """Frame components of nabla_{d_axis} T."""
        return self.partial(array, axis) - self.connection_term(array, axis)

    def nabla(self, array: np.ndarray) -> np.ndarray:
        """Frame components of nabla T, derivative slot first."""
        rank = array.ndim - 1
        out = np.zeros((self.grid.npts, self.n) + array.shape[1:])
        for axis in range(self.n):
            coeff = self.frame[:, axis, :].reshape((self.grid.npts, self.n) + (1,) * rank)
            out += coeff * self.covariant_partial(array, axis)[:, None]
        return out

    def divergence(self, array: np.ndarray) -> np.ndarray:
        """Contraction of nabla T over the derivative slot and T's first slot."""
        rank = array.ndim - 1
        out = np.zeros((self.grid.npts,) + array.shape[2:])
        for axis in range(self.n):
            coeff = self.frame[:, axis, :].reshape((self.grid.npts, self.n) + (1,) * (rank - 1))
            out += np.sum(coeff * self.covariant_partial(array, axis), axis=1)
        return out

    def _diagonal_second(self, array: np.ndarray, axis: int) -> np.ndarray:
        """(nabla^2 T)(d_axis, d_axis) with the compact second difference."""
        conn = self.connection[axis]
        d = self.partial(array, axis)
        out = (self.second_partial(array, axis)
               - self._act(self.grid.connection_derivative[axis], array)
               - 2.0 * self._act(conn, d)
               + self._act(conn, self._act(conn, array)))
        gamma = self.grid.christoffel_diagonal[axis]
        pad = (1,) * (array.ndim - 1)
        for c in range(self.n):
            if np.any(gamma[:, c]):
                out -= gamma[:, c].reshape((-1,) + pad) * self.covariant_partial(array, c)
        return out

    def laplacian(self, array: np.ndarray) -> np.ndarray:
        """
        Rough Laplacian g^{ab} (nabla^2 T)(d_a, d_b).

        Diagonal chart terms use three-point second differences, so the
        discrete operator has no checkerboard kernel; mixed terms come from
        nabla applied twice.
        """
        pad = (1,) * (array.ndim - 1)
        ginv = self.grid.metric_inv
        out = np.zeros_like(array)
        for a in range(self.n):
            out += ginv[:, a, a].reshape((-1,) + pad) * self._diagonal_second(array, a)
        off = ginv - np.einsum('pab,ab->pab', ginv, np.eye(self.n))
        if np.any(off):
            hess = self.nabla(self.nabla(array))
            chart = np.einsum('pea,pdb,ped...->pab...', self.coframe, self.coframe, hess)
            out += np.einsum('pab,pab...->p...', off, chart)
        return out


@lru_cache(maxsize=8)
def frame_calculus(grid: ChartedGrid) -> FrameCalculus:
    return FrameCalculus(grid)


@dataclass(frozen=True, eq=False)
class FactorCurvature:
    """Curvature of one grid factor, chart and frame components on the factor's points."""

    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    riemann_frame: np.ndarray
    ricci_frame: np.ndarray


def _space_form_tensor(metric: np.ndarray, curvature: float) -> np.ndarray:
    return curvature * (np.einsum('pik,pjl->pijkl', metric, metric)
                        - np.einsum('pil,pjk->pijkl', metric, metric))


def _closed_form_factor(fac: Factor) -> FactorCurvature:
    d = fac.dimension
    identity = np.broadcast_to(np.eye(d), (fac.npts, d, d))
    return FactorCurvature(
        christoffel=fac.christoffel,
        riemann=_space_form_tensor(fac.metric, fac.curvature),
        ricci=fac.curvature * (d - 1) * fac.metric,
        scalar=np.full(fac.npts, fac.curvature * d * (d - 1)),
        riemann_frame=_space_form_tensor(identity, fac.curvature),
        ricci_frame=fac.curvature * (d - 1) * identity,
    )


def _fourth_order_difference(size: int, spacing: float) -> np.ndarray:
    """Five-point first difference with fourth-order one-sided rows at both ends."""
    d = np.zeros((size, size))
    for i in range(2, size - 2):
        d[i, i - 2:i + 3] = [1.0, -8.0, 0.0, 8.0, -1.0]
    d[0, 0:5] = [-25.0, 48.0, -36.0, 16.0, -3.0]
    d[1, 0:5] = [-3.0, -10.0, 18.0, -6.0, 1.0]
    d[size - 2, size - 5:] = [-1.0, 6.0, -18.0, 10.0, 3.0]
    d[size - 1, size - 5:] = [3.0, -16.0, 36.0, -48.0, 25.0]
    return d / (12.0 * spacing)


def _chart_gradient(values: np.ndarray, spacing: Tuple[float, ...], dims: int) -> np.ndarray:
    """(..chart.., *rest) -> (..chart.., dims, *rest), fourth order up to the chart edges."""
    parts = []
    for a in range(dims):
        d = _fourth_order_difference(values.shape[a], spacing[a])
        parts.append(np.moveaxis(np.tensordot(d, values, axes=(1, a)), 0, a))
    return np.stack(parts, axis=dims)


def _fd_factor(fac: Factor, metric: np.ndarray) -> FactorCurvature:
    d = fac.dimension
    christoffel = np.zeros((fac.npts, d, d, d))
    riemann = np.zeros((fac.npts, d, d, d, d))
    for c in range(fac.chart_count):
        idx = np.flatnonzero(fac.chart_index == c).reshape(fac.chart_shape)
        g = metric[idx]
        ginv = np.linalg.inv(g)
        # dg[..., i, j, l] = d_i g_jl
        dg = _chart_gradient(g, fac.spacing, d)
        gamma = 0.5 * np.einsum('...kl,...ijl->...kij', ginv,
                                dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1))
        # dgamma[..., i, m, j, l] = d_i Gamma^m_jl
        dgamma = _chart_gradient(gamma, fac.spacing, d)
        q = (dgamma - np.swapaxes(dgamma, -4, -2)
             + np.einsum('...pjl,...mip->...imjl', gamma, gamma)
             - np.einsum('...pil,...mjp->...imjl', gamma, gamma))
        christoffel[idx.ravel()] = gamma.reshape((-1, d, d, d))
        riemann[idx.ravel()] = np.einsum('...km,...imjl->...ijkl', g, q).reshape((-1, d, d, d, d))
    ginv = np.linalg.inv(metric)
    ricci = np.einsum('pjl,pijkl->pik', ginv, riemann)
    ricci = 0.5 * (ricci + np.swapaxes(ricci, 1, 2))
    frame = fac.frame
    return FactorCurvature(
        christoffel=christoffel,
        riemann=riemann,
        ricci=ricci,
        scalar=np.einsum('pik,pik->p', ginv, ricci),
        riemann_frame=np.einsum('pijkl,pia,pjb,pkc,pld->pabcd', riemann, frame, frame, frame, frame),
        ricci_frame=np.einsum('pik,pia,pkb->pab', ricci, frame, frame),
    )


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """Christoffel symbols, Riemann, Ricci and scalar curvature of a grid metric."""

    grid: ChartedGrid
    mode: str
    factors: Tuple[FactorCurvature, ...]

    def _assemble(self, name: str, rank: int) -> np.ndarray:
        grid = self.grid
        out = np.zeros((grid.npts,) + (grid.dimension,) * rank)
        for k, fc in enumerate(self.factors):
            s = grid.factor_slice(k)
            values = getattr(fc, name)
            if len(self.factors) > 1:
                values = values[grid.factor_points(k)]
            out[(slice(None),) + (s,) * rank] = values
        return out

    @cached_property
    def ricci(self) -> TensorField:
        return TensorField.sym_tensor(self.grid, self._assemble("ricci", 2))

    @cached_property
    def ricci_frame(self) -> np.ndarray:
        return self._assemble("ricci_frame", 2)

    @cached_property
    def scalar(self) -> TensorField:
        total = np.zeros(self.grid.npts)
        for k, fc in enumerate(self.factors):
            total += fc.scalar if len(self.factors) == 1 else fc.scalar[self.grid.factor_points(k)]
        return TensorField.scalar(self.grid, total)

    @cached_property
    def christoffel(self) -> np.ndarray:
        """(P, n, n, n) with christoffel[p, k, i, j] = Gamma^k_ij."""
        return self._assemble("christoffel", 3)

    @cached_property
    def riemann(self) -> np.ndarray:
        """(P, n, n, n, n) fully covariant R_ijkl; mixed-factor components vanish."""
        return self._assemble("riemann", 4)

    def _factor_riemann_frame(self, k: int) -> np.ndarray:
        values = self.factors[k].riemann_frame
        return values if len(self.factors) == 1 else values[self.grid.factor_points(k)]

    def action_frame(self, h: np.ndarray) -> np.ndarray:
        """Rm(h, .)_ik = R_ijkl h_jl on frame components."""
        out = np.zeros_like(h)
        for k in range(len(self.factors)):
            s = self.grid.factor_slice(k)
            out[:, s, s] = np.einsum('pijkl,pjl->pik', self._factor_riemann_frame(k), h[:, s, s])
        return out

    def contract_last_frame(self, w: np.ndarray) -> np.ndarray:
        """R_ijkl w^l on frame components."""
        n = self.grid.dimension
        out = np.zeros((self.grid.npts, n, n, n))
        for k in range(len(self.factors)):
            s = self.grid.factor_slice(k)
            out[:, s, s, s] = np.einsum('pijkl,pl->pijk', self._factor_riemann_frame(k), w[:, s])
        return out


def _check_positive_definite(comps: np.ndarray) -> None:
    if not np.all(np.isfinite(comps)):
        raise NumericalCheckError("metric has non-finite components")
    smallest = float(np.min(np.linalg.eigvalsh(comps)))
    if smallest <= 0:
        raise NumericalCheckError(f"metric is not positive definite (smallest eigenvalue {smallest:.3e})")


def _factor_blocks(grid: ChartedGrid, comps: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Split a product metric into per-factor blocks on the factor points."""
    if len(grid.factors) == 1:
        return (comps,)
    blocks = []
    shaped = comps.reshape(grid.point_shape + comps.shape[1:])
    for k in range(len(grid.factors)):
        s = grid.factor_slice(k)
        index = [0] * len(grid.factors)
        index[k] = slice(None)
        block = shaped[tuple(index)][:, s, s]
        expanded = comps[:, s, s]
        if np.max(np.abs(expanded - block[grid.factor_points(k)])) > METRIC_MATCH_TOLERANCE * np.max(np.abs(block)):
            raise ConfigurationError("finite-difference curvature needs a product metric")
        blocks.append(block)
    mixed = comps.copy()
    for k in range(len(grid.factors)):
        s = grid.factor_slice(k)
        mixed[:, s, s] = 0.0
    if np.max(np.abs(mixed)) > METRIC_MATCH_TOLERANCE * np.max(np.abs(comps)):
        raise ConfigurationError("finite-difference curvature needs a product metric")
    return tuple(blocks)


def curvature(grid: ChartedGrid, metric: TensorField, mode: str = "closed-form") -> CurvatureBundle:
    """
    Curvature bundle of a metric on a charted grid.

    Args:
        grid: The charted grid.
        metric: Positive-definite symmetric 2-tensor.
        mode: "closed-form" (zoo metrics only) or "finite-difference".

    Returns:
        CurvatureBundle

    Raises:
        NumericalCheckError: metric not positive definite.
        ConfigurationError: unknown mode, or closed form requested for a non-zoo metric.
    """
    if mode not in CURVATURE_MODES:
        raise ConfigurationError(f"unknown curvature mode '{mode}'")
    grid.check_same(metric.grid)
    comps = metric.components
    _check_positive_definite(comps)

    if mode == "closed-form":
        scale = np.max(np.abs(grid.metric))
        if np.max(np.abs(comps - grid.metric)) > METRIC_MATCH_TOLERANCE * scale:
            raise ConfigurationError("no closed-form curvature for a metric other than the zoo metric")
        factors = tuple(_closed_form_factor(f) for f in grid.factors)
    else:
        factors = tuple(_fd_factor(f, block) for f, block in zip(grid.factors, _factor_blocks(grid, comps)))

    logger.debug(f"Curvature ({mode}) on {grid.descriptor.label()} N={grid.resolution}")
    return CurvatureBundle(grid=grid, mode=mode, factors=factors)


# chart-component wrappers

def _calculus(field: TensorField) -> FrameCalculus:
    return frame_calculus(field.grid)


def covariant_derivative(field: TensorField) -> np.ndarray:
    """Chart components of nabla T, derivative index first."""
    calc = _calculus(field)
    return calc.to_chart(calc.nabla(calc.to_frame(field.components)))


def gradient(u: TensorField) -> TensorField:
    if u.rank != 0:
        raise ConfigurationError("gradient takes a scalar field")
    calc = _calculus(u)
    return TensorField.one_form(u.grid, calc.to_chart(calc.nabla(u.components)))


def hessian(u: TensorField) -> TensorField:
    if u.rank != 0:
        raise ConfigurationError("hessian takes a scalar field")
    calc = _calculus(u)
    second = symmetrize(calc.nabla(calc.nabla(u.components)))
    return TensorField.sym_tensor(u.grid, calc.to_chart(second))


def rough_laplacian(field: TensorField) -> TensorField:
    """Trace of the second covariant derivative, same rank as the input."""
    if field.rank > 2:
        raise ConfigurationError(f"unsupported rank {field.rank}")
    calc = _calculus(field)
    lap = calc.laplacian(calc.to_frame(field.components))
    return TensorField(field.grid, field.rank, calc.to_chart(lap))


def curvature_action(bundle: CurvatureBundle, h: TensorField) -> TensorField:
    """Rm(h, .)_ik = R_ijkl h_jl with indices of h raised."""
    if h.rank != 2:
        raise ConfigurationError("curvature action takes a symmetric 2-tensor")
    calc = _calculus(h)
    return TensorField.sym_tensor(h.grid, calc.to_chart(bundle.action_frame(calc.to_frame(h.components))))


def ricci_identity_residual(bundle: CurvatureBundle, w: TensorField, interior_only: Optional[bool] = None) -> float:
    """
    Relative size of nabla_i nabla_j w_k - nabla_j nabla_i w_k - R_ijkl w^l.

    Frame components make the pointwise norm a plain sum of squares. The
    scale includes |w| / L^2, with L the side of a cube of the grid's volume,
    so both sides vanishing on flat space reads as zero rather than 0/0.
    """
    if w.rank != 1:
        raise ConfigurationError("the Ricci identity check takes a 1-form")
    grid = w.grid
    calc = _calculus(w)
    frame_w = calc.to_frame(w.components)
    second = calc.nabla(calc.nabla(frame_w))
    commutator = second - np.swapaxes(second, 1, 2)
    curvature_side = bundle.contract_last_frame(frame_w)
    use_mask = grid.topology == "flat-box" if interior_only is None else interior_only
    weights = grid.weights * (grid.mask if use_mask else 1.0)

    def norm(x):
        return np.sqrt(np.sum(weights * np.sum(x.reshape(grid.npts, -1) ** 2, axis=1)))

    length_sq = np.sum(weights) ** (2.0 / grid.dimension)
    scale = norm(commutator) + norm(curvature_side) + norm(frame_w) / length_sq
    return float(norm(commutator - curvature_side) / (scale + RELATIVE_EPSILON))
