"""
Charted grids for the soliton zoo and the tensor fields that live on them.

A grid is a product of one or two factors. A factor is either a cubed sphere
(six gnomonic panels with seam ghost maps) or a flat box (a single chart with
one-sided edge stencils and an interior mask). Geometry is carried per factor
and assembled block-diagonally on the product points, which are ordered
factor-major: p = i_1 * P_2 + i_2.

Tensor fields store covariant components in chart coordinates. Rank-2 fields
are symmetric by construction.
"""
import sys
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import sparse

sys.path.append(str(Path(__file__).parent))
from cubed_sphere import cubed_sphere_mesh
from errors import ConfigurationError, GridError, NumericalCheckError

MIN_RESOLUTION = 8
MAX_DIMENSION = 4
# flat-box residuals are read on |x_i| < (1/2 - INTERIOR_MARGIN) * side, the same region at every N
INTERIOR_MARGIN = 5.0 / 16.0
MIN_MARGIN_POINTS = 2
GHOST_INTERP_POINTS = 6
SUPPORTED_MANIFOLDS = ("sphere", "product", "flat-box")


@dataclass(frozen=True)
class ManifoldDescriptor:
    """Name and parameters of a zoo geometry."""

    name: str
    curvatures: Tuple[float, ...] = (0.5,)
    dimension: int = 2
    side: float = 8.0

    def label(self) -> str:
        if self.name == "sphere":
            return f"sphere({self.curvatures[0]:g})"
        if self.name == "product":
            return "product(" + ", ".join(f"sphere({k:g})" for k in self.curvatures) + ")"
        return f"flat-box(n={self.dimension}, side={self.side:g})"

    def scaled(self, length_factor: float) -> "ManifoldDescriptor":
        """Descriptor of the homothetic geometry with lengths multiplied by length_factor."""
        return ManifoldDescriptor(
            name=self.name,
            curvatures=tuple(k / length_factor ** 2 for k in self.curvatures),
            dimension=self.dimension,
            side=self.side * length_factor,
        )


@dataclass(frozen=True, eq=False)
class Factor:
    """One factor of a charted grid with its analytic geometry and stencils."""

    kind: str
    dimension: int
    curvature: float
    resolution: int
    coords: np.ndarray
    chart_index: np.ndarray
    ambient: np.ndarray
    tangents: np.ndarray
    weights: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    christoffel: np.ndarray
    frame: np.ndarray
    coframe: np.ndarray
    connection: np.ndarray
    connection_derivative: np.ndarray
    derivative: Tuple[sparse.csr_matrix, ...]
    second_derivative: Tuple[sparse.csr_matrix, ...]
    ghost_derivative: Tuple[sparse.csr_matrix, ...]
    ghost_second: Tuple[sparse.csr_matrix, ...]
    ghost_interp: Tuple[sparse.csr_matrix, ...]
    ghost_rotation: Tuple[np.ndarray, ...]
    mask: np.ndarray
    spacing: Tuple[float, ...]
    chart_shape: Tuple[int, ...]
    chart_count: int

    @property
    def npts(self) -> int:
        return self.weights.shape[0]

    @property
    def ambient_dimension(self) -> int:
        return self.ambient.shape[1]

    def has_ghosts(self, axis: int) -> bool:
        return self.ghost_interp[axis].shape[0] > 0


def _sphere_factor(curvature: float, resolution: int, interp_points: int) -> Factor:
    if curvature <= 0:
        raise GridError(f"sphere curvature must be positive, got {curvature}")
    radius = 1.0 / np.sqrt(curvature)
    mesh = cubed_sphere_mesh(radius, resolution, interp_points)
    return Factor(kind="sphere", dimension=2, curvature=curvature, resolution=resolution,
                  mask=np.ones(mesh["weights"].shape[0], dtype=bool), **mesh)


def _one_sided_difference(size: int, spacing: float) -> sparse.csr_matrix:
    """Centred first difference with second-order one-sided rows at both ends."""
    d = sparse.lil_matrix((size, size))
    for i in range(1, size - 1):
        d[i, i - 1] = -0.5 / spacing
        d[i, i + 1] = 0.5 / spacing
    d[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * spacing)
    d[size - 1, size - 3:size] = np.array([1.0, -4.0, 3.0]) / (2.0 * spacing)
    return d.tocsr()


def _one_sided_second_difference(size: int, spacing: float) -> sparse.csr_matrix:
    """Centred second difference with second-order one-sided rows at both ends."""
    d = sparse.lil_matrix((size, size))
    for i in range(1, size - 1):
        d[i, i - 1:i + 2] = np.array([1.0, -2.0, 1.0]) / spacing ** 2
    d[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / spacing ** 2
    d[size - 1, size - 4:size] = np.array([-1.0, 4.0, -5.0, 2.0]) / spacing ** 2
    return d.tocsr()


def _flat_factor(dimension: int, side: float, resolution: int, margin: float) -> Factor:
    if side <= 0:
        raise GridError(f"box side must be positive, got {side}")
    if not 0.0 <= margin < 0.5:
        raise GridError(f"interior margin must be a side fraction in [0, 0.5), got {margin}")
    if margin * resolution < MIN_MARGIN_POINTS:
        raise GridError(f"interior margin {margin:g} keeps fewer than {MIN_MARGIN_POINTS} edge points out at N={resolution}")
    h = side / resolution
    axis_points = -side / 2 + (np.arange(resolution) + 0.5) * h
    mesh = np.meshgrid(*([axis_points] * dimension), indexing='ij')
    coords = np.stack([m.ravel() for m in mesh], axis=-1)
    npts = coords.shape[0]

    eye = sparse.identity(resolution, format='csr')

    def along_axes(d: sparse.csr_matrix) -> Tuple[sparse.csr_matrix, ...]:
        ops = []
        for axis in range(dimension):
            op = sparse.csr_matrix(np.ones((1, 1)))
            for k in range(dimension):
                op = sparse.kron(op, d if k == axis else eye, format='csr')
            ops.append(op)
        return tuple(ops)

    mask = np.all(np.abs(coords) < (0.5 - margin) * side, axis=-1)
    if not np.any(mask):
        raise GridError(f"flat box at N={resolution} has no point inside the interior margin")
    identity = np.broadcast_to(np.eye(dimension), (npts, dimension, dimension)).copy()
    empty = sparse.csr_matrix((npts, 0))
    return Factor(
        kind="flat", dimension=dimension, curvature=0.0, resolution=resolution,
        coords=coords, chart_index=np.zeros(npts, dtype=int), ambient=coords.copy(),
        tangents=identity.copy(), weights=np.full(npts, h ** dimension),
        metric=identity.copy(), metric_inv=identity.copy(),
        christoffel=np.zeros((npts,) + (dimension,) * 3),
        frame=identity.copy(), coframe=identity.copy(),
        connection=np.zeros((npts,) + (dimension,) * 3),
        connection_derivative=np.zeros((npts,) + (dimension,) * 3),
        derivative=along_axes(_one_sided_difference(resolution, h)),
        second_derivative=along_axes(_one_sided_second_difference(resolution, h)),
        ghost_derivative=(empty,) * dimension,
        ghost_second=(empty,) * dimension,
        ghost_interp=(sparse.csr_matrix((0, npts)),) * dimension,
        ghost_rotation=(np.zeros((0, dimension, dimension)),) * dimension,
        mask=mask, spacing=(h,) * dimension,
        chart_shape=(resolution,) * dimension, chart_count=1,
    )


@dataclass(frozen=True)
class Chart:
    """One coordinate chart: ranges, spacing and the grid points it owns."""

    name: str
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    spacing: Tuple[float, ...]
    points: np.ndarray


@dataclass(frozen=True, eq=False)
class ChartedGrid:
    """
    A manifold covered by coordinate charts, with quadrature weights and
    ghost maps. Immutable; geometry arrays are assembled lazily.
    """

    descriptor: ManifoldDescriptor
    resolution: int
    factors: Tuple[Factor, ...]
    interp_points: int = GHOST_INTERP_POINTS

    @property
    def topology(self) -> str:
        return {"sphere": "sphere-cubed", "product": "product", "flat-box": "flat-box"}[self.descriptor.name]

    @cached_property
    def dimension(self) -> int:
        return sum(f.dimension for f in self.factors)

    @cached_property
    def point_shape(self) -> Tuple[int, ...]:
        return tuple(f.npts for f in self.factors)

    @cached_property
    def npts(self) -> int:
        return int(np.prod(self.point_shape))

    @cached_property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(int(x) for x in np.cumsum([0] + [f.dimension for f in self.factors])[:-1])

    @cached_property
    def axes(self) -> Tuple[Tuple[int, int], ...]:
        """(factor, local axis) of every global chart axis."""
        return tuple((k, a) for k, f in enumerate(self.factors) for a in range(f.dimension))

    def factor_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + self.factors[k].dimension)

    def factor_points(self, k: int) -> np.ndarray:
        """Index of each grid point into the points of factor k."""
        return np.unravel_index(np.arange(self.npts), self.point_shape)[k]

    def _gather(self, k: int, array: np.ndarray) -> np.ndarray:
        if len(self.factors) == 1:
            return array
        return array[self.factor_points(k)]

    def _block_diagonal(self, name: str) -> np.ndarray:
        n = self.dimension
        out = np.zeros(self.point_shape + (n, n))
        for k, fac in enumerate(self.factors):
            s = self.factor_slice(k)
            shape = [1] * len(self.factors)
            shape[k] = fac.npts
            out[..., s, s] = getattr(fac, name).reshape(tuple(shape) + getattr(fac, name).shape[1:])
        return out.reshape((self.npts, n, n))

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.factors[0].weights
        for fac in self.factors[1:]:
            w = np.multiply.outer(w, fac.weights).ravel()
        return w

    @cached_property
    def mask(self) -> np.ndarray:
        m = self.factors[0].mask
        for fac in self.factors[1:]:
            m = np.logical_and.outer(m, fac.mask).ravel()
        return m

    @cached_property
    def metric(self) -> np.ndarray:
        return self._block_diagonal("metric")

    @cached_property
    def metric_inv(self) -> np.ndarray:
        return self._block_diagonal("metric_inv")

    @cached_property
    def frame(self) -> np.ndarray:
        return self._block_diagonal("frame")

    @cached_property
    def coframe(self) -> np.ndarray:
        return self._block_diagonal("coframe")

    @cached_property
    def coords(self) -> np.ndarray:
        return np.concatenate([self._gather(k, f.coords) for k, f in enumerate(self.factors)], axis=-1)

    @cached_property
    def ambient(self) -> np.ndarray:
        """Ambient embedding coordinates, factors concatenated."""
        return np.concatenate([self._gather(k, f.ambient) for k, f in enumerate(self.factors)], axis=-1)

    @cached_property
    def tangents(self) -> np.ndarray:
        """(P, n, M) ambient tangent vectors of the chart axes, block structured."""
        sizes = [f.ambient_dimension for f in self.factors]
        amb_offsets = np.cumsum([0] + sizes)
        out = np.zeros((self.npts, self.dimension, amb_offsets[-1]))
        for k, fac in enumerate(self.factors):
            out[:, self.factor_slice(k), amb_offsets[k]:amb_offsets[k + 1]] = self._gather(k, fac.tangents)
        return out

    def ambient_slice(self, k: int) -> slice:
        sizes = [f.ambient_dimension for f in self.factors]
        start = int(sum(sizes[:k]))
        return slice(start, start + sizes[k])

    @cached_property
    def connection(self) -> Tuple[np.ndarray, ...]:
        """Per global axis a, the (P, n, n) frame connection coefficients omega_a[c, b]."""
        return self._per_axis_block("connection")

    @cached_property
    def connection_derivative(self) -> Tuple[np.ndarray, ...]:
        """Per global axis a, d_a omega_a as (P, n, n)."""
        return self._per_axis_block("connection_derivative")

    def _per_axis_block(self, name: str) -> Tuple[np.ndarray, ...]:
        n = self.dimension
        out = []
        for k, local in self.axes:
            s = self.factor_slice(k)
            block = np.zeros((self.npts, n, n))
            block[:, s, s] = self._gather(k, getattr(self.factors[k], name)[:, local])
            out.append(block)
        return tuple(out)

    @cached_property
    def christoffel_diagonal(self) -> Tuple[np.ndarray, ...]:
        """Per global axis a, Gamma^c_aa as (P, n); factors do not mix."""
        out = []
        for k, local in self.axes:
            row = np.zeros((self.npts, self.dimension))
            row[:, self.factor_slice(k)] = self._gather(k, self.factors[k].christoffel[:, :, local, local])
            out.append(row)
        return tuple(out)

    @cached_property
    def ghost_rotation(self) -> Tuple[np.ndarray, ...]:
        """Per global axis, (G, n, n) frame rotations acting on the owning factor's block."""
        n = self.dimension
        out = []
        for k, local in self.axes:
            rot = self.factors[k].ghost_rotation[local]
            s = self.factor_slice(k)
            full = np.broadcast_to(np.eye(n), (rot.shape[0], n, n)).copy()
            full[:, s, s] = rot
            out.append(full)
        return tuple(out)

    @cached_property
    def charts(self) -> List[Chart]:
        """Chart records; products list every pair of factor charts."""
        per_factor = []
        for k, fac in enumerate(self.factors):
            records = []
            for c in range(fac.chart_count):
                idx = np.flatnonzero(fac.chart_index == c).reshape(fac.chart_shape)
                pts = fac.coords[idx.ravel()]
                records.append((f"{fac.kind}{k}:{c}", tuple(pts.min(axis=0)), tuple(pts.max(axis=0)),
                                fac.spacing, idx))
            per_factor.append(records)
        if len(per_factor) == 1:
            return [Chart(*r) for r in per_factor[0]]
        charts = []
        p2 = self.point_shape[1]
        for r1 in per_factor[0]:
            for r2 in per_factor[1]:
                points = r1[4][(...,) + (None,) * r2[4].ndim] * p2 + r2[4]
                charts.append(Chart(f"{r1[0]}x{r2[0]}", r1[1] + r2[1], r1[2] + r2[2], r1[3] + r2[3], points))
        return charts

    def rescaled(self, length_factor: float) -> "ChartedGrid":
        """The same grid on the homothetic geometry (metric multiplied by length_factor^2)."""
        return build_grid(self.descriptor.scaled(length_factor), self.resolution, interp_points=self.interp_points)

    def check_same(self, other: "ChartedGrid") -> None:
        if other is not self:
            raise ConfigurationError("fields live on different grids")


def build_grid(descriptor: ManifoldDescriptor, resolution: int, *,
               interp_points: int = GHOST_INTERP_POINTS, margin: float = INTERIOR_MARGIN) -> ChartedGrid:
    """
    Build the charted grid of a zoo descriptor.

    Args:
        descriptor: sphere, product of two spheres, or flat box.
        resolution: Points per panel axis (per box axis for the flat box).
        interp_points: Points of the seam Lagrange interpolation.
        margin: Interior-mask margin of the flat box, as a fraction of its side.

    Returns:
        ChartedGrid with quadrature weights and ghost maps.

    Raises:
        GridError: unsupported descriptor or resolution below the stencil minimum.
    """
    if descriptor.name not in SUPPORTED_MANIFOLDS:
        raise GridError(f"unsupported manifold descriptor '{descriptor.name}'")
    if resolution < MIN_RESOLUTION:
        raise GridError(f"resolution N={resolution} is below the minimum stencil width {MIN_RESOLUTION}")

    if descriptor.name == "sphere":
        if len(descriptor.curvatures) != 1:
            raise GridError("sphere takes exactly one curvature")
        factors = (_sphere_factor(descriptor.curvatures[0], resolution, interp_points),)
    elif descriptor.name == "product":
        if len(descriptor.curvatures) != 2:
            raise GridError("product takes exactly two sphere curvatures")
        factors = tuple(_sphere_factor(k, resolution, interp_points) for k in descriptor.curvatures)
    else:
        if not 2 <= descriptor.dimension <= MAX_DIMENSION:
            raise GridError(f"flat box dimension must lie in [2, {MAX_DIMENSION}]")
        factors = (_flat_factor(descriptor.dimension, descriptor.side, resolution, margin),)

    grid = ChartedGrid(descriptor=descriptor, resolution=resolution, factors=factors,
                       interp_points=interp_points)
    if np.any(grid.weights <= 0):
        raise GridError("non-positive quadrature weight")
    logger.info(f"Built {descriptor.label()} grid: N={resolution}, {grid.npts} points, "
                f"total weight {grid.weights.sum():.8f}")
    return grid


Number = Union[int, float]


@dataclass(frozen=True, eq=False)
class TensorField:
    """
    Covariant chart components of a scalar, 1-form or symmetric 2-tensor.

    components has shape (P,), (P, n) or (P, n, n).
    """

    grid: ChartedGrid
    rank: int
    components: np.ndarray

    def __post_init__(self):
        if self.rank not in (0, 1, 2):
            raise ConfigurationError(f"unsupported tensor rank {self.rank}")
        comps = np.array(self.components, dtype=float)
        expected = (self.grid.npts,) + (self.grid.dimension,) * self.rank
        if comps.shape != expected:
            raise ConfigurationError(f"components of shape {comps.shape} do not match {expected}")
        if self.rank == 2:
            comps = 0.5 * (comps + np.swapaxes(comps, 1, 2))
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    @classmethod
    def scalar(cls, grid: ChartedGrid, values) -> "TensorField":
        return cls(grid, 0, np.broadcast_to(np.asarray(values, float), (grid.npts,)))

    @classmethod
    def one_form(cls, grid: ChartedGrid, components) -> "TensorField":
        return cls(grid, 1, components)

    @classmethod
    def sym_tensor(cls, grid: ChartedGrid, components) -> "TensorField":
        return cls(grid, 2, components)

    @classmethod
    def zeros(cls, grid: ChartedGrid, rank: int) -> "TensorField":
        return cls(grid, rank, np.zeros((grid.npts,) + (grid.dimension,) * rank))

    def _coerce(self, other: "TensorField") -> np.ndarray:
        if not isinstance(other, TensorField):
            return NotImplemented
        self.grid.check_same(other.grid)
        if other.rank != self.rank:
            raise ConfigurationError(f"rank mismatch: {self.rank} vs {other.rank}")
        return other.components

    def __add__(self, other):
        comps = self._coerce(other)
        if comps is NotImplemented:
            return NotImplemented
        return TensorField(self.grid, self.rank, self.components + comps)

    def __sub__(self, other):
        comps = self._coerce(other)
        if comps is NotImplemented:
            return NotImplemented
        return TensorField(self.grid, self.rank, self.components - comps)

    def __neg__(self):
        return TensorField(self.grid, self.rank, -self.components)

    def __mul__(self, other):
        if isinstance(other, TensorField):
            # pointwise product with a scalar field
            if other.rank != 0:
                raise ConfigurationError("fields can only be multiplied by scalar fields")
            self.grid.check_same(other.grid)
            factor = other.components.reshape((-1,) + (1,) * self.rank)
            return TensorField(self.grid, self.rank, self.components * factor)
        return TensorField(self.grid, self.rank, self.components * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Number):
        return TensorField(self.grid, self.rank, self.components / float(other))


ScalarField = TensorField
OneFormField = TensorField
SymTensorField = TensorField


def zoo_metric(grid: ChartedGrid) -> SymTensorField:
    """The analytic metric a zoo grid carries."""
    return TensorField.sym_tensor(grid, grid.metric)


def factor_metric(grid: ChartedGrid, k: int) -> SymTensorField:
    """Metric of factor k alone (g_1 or g_2 of a product), zero on the other block."""
    comps = np.zeros_like(grid.metric)
    s = grid.factor_slice(k)
    comps[:, s, s] = grid.metric[:, s, s]
    return TensorField.sym_tensor(grid, comps)


def pointwise_inner(a: TensorField, b: TensorField, metric_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """Pointwise <a, b>_g, indices raised with the inverse metric."""
    a.grid.check_same(b.grid)
    if a.rank != b.rank:
        raise ConfigurationError(f"rank mismatch: {a.rank} vs {b.rank}")
    ginv = a.grid.metric_inv if metric_inv is None else metric_inv
    if a.rank == 0:
        return a.components * b.components
    if a.rank == 1:
        return np.einsum('pi,pij,pj->p', a.components, ginv, b.components)
    raised = ginv @ a.components @ ginv
    return np.einsum('pij,pij->p', raised, b.components)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalCheckError(f"{what} has non-finite components")


def integrate(u: ScalarField, mode: str = "plain", potential: Optional[ScalarField] = None,
              interior_only: bool = False) -> float:
    """
    Quadrature of a scalar field.

    Args:
        u: Scalar field.
        mode: "plain" for sum(u w) or "weighted" for sum(u exp(-f) w).
        potential: The potential f, required in weighted mode.
        interior_only: Restrict the sum to the grid's interior mask.

    Returns:
        The integral.
    """
    if u.rank != 0:
        raise ConfigurationError("integrate takes a scalar field")
    _check_finite(u.components, "integrand")
    w = u.grid.weights
    if interior_only:
        w = w * u.grid.mask
    if mode == "plain":
        return float(np.sum(u.components * w))
    if mode != "weighted":
        raise ConfigurationError(f"unknown integration mode '{mode}'")
    if potential is None:
        raise ConfigurationError("weighted integration needs a potential")
    u.grid.check_same(potential.grid)
    return float(np.sum(u.components * np.exp(-potential.components) * w))


def inner_product(a: TensorField, b: TensorField, metric: Optional[SymTensorField] = None,
                  potential: Optional[ScalarField] = None, interior_only: bool = False) -> float:
    """
    Weighted L2 inner product (a, b)_f = sum <a, b>_g exp(-f) w.

    Args:
        a: First field.
        b: Second field of the same rank on the same grid.
        metric: Metric used to raise indices (default: the grid's zoo metric).
        potential: Potential f; omitted means f = 0.
        interior_only: Restrict the sum to the grid's interior mask.
    """
    ginv = None if metric is None else np.linalg.inv(metric.components)
    values = pointwise_inner(a, b, ginv)
    _check_finite(values, "inner product integrand")
    w = a.grid.weights * (a.grid.mask if interior_only else 1.0)
    if potential is not None:
        w = w * np.exp(-potential.components)
    return float(np.sum(values * w))


def pack_symmetric(arr: np.ndarray) -> np.ndarray:
    """Upper triangle of the last two axes, off-diagonals scaled by sqrt(2) to keep dot products."""
    n = arr.shape[-1]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return arr[..., iu[0], iu[1]] * scale


def unpack_symmetric(packed: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    out = np.zeros(packed.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = packed / scale
    out[..., iu[1], iu[0]] = packed / scale
    return out


def volume(grid: ChartedGrid) -> float:
    """Analytic volume of the zoo geometry."""
    d = grid.descriptor
    if d.name == "flat-box":
        return d.side ** d.dimension
    return float(np.prod([4.0 * np.pi / k for k in d.curvatures]))


def grid_summary(grid: ChartedGrid) -> dict:
    return {
        "manifold": grid.descriptor.label(),
        "topology": grid.topology,
        "resolution": grid.resolution,
        "points": grid.npts,
        "total_weight": float(grid.weights.sum()),
        "volume": volume(grid),
    }


def stack_fields(fields: Sequence[TensorField]) -> np.ndarray:
    return np.stack([f.components for f in fields])
