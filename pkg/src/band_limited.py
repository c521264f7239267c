"""
Seeded smooth test fields.

On spheres and sphere products the fields are restrictions of random ambient
polynomials (tangential projections for 1-forms and 2-tensors); on the flat
box they are random low-frequency trigonometric sums. Either way the
continuum field depends only on the generator state, never on the
resolution, so the same seed gives the same field at every N.
"""
import itertools
import sys
from pathlib import Path
from typing import List, Tuple

import numpy as np

sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError
from grid_geometry import ChartedGrid, TensorField


def _exponents(dimension: int, degree: int) -> List[Tuple[int, ...]]:
    return [e for e in itertools.product(range(degree + 1), repeat=dimension) if sum(e) <= degree]


def _normalized_ambient(grid: ChartedGrid) -> np.ndarray:
    """Ambient coordinates, each sphere factor scaled to the unit sphere."""
    parts = []
    for k, fac in enumerate(grid.factors):
        coords = grid.ambient[:, grid.ambient_slice(k)]
        scale = np.sqrt(fac.curvature) if fac.kind == "sphere" else 2.0 / grid.descriptor.side
        parts.append(coords * scale)
    return np.concatenate(parts, axis=-1)


def _random_polynomials(x: np.ndarray, degree: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count random polynomials of total degree <= degree evaluated at points x, shape (P, count)."""
    exps = _exponents(x.shape[1], degree)
    coeffs = rng.standard_normal((len(exps), count))
    out = np.zeros((x.shape[0], count))
    for e, c in zip(exps, coeffs):
        out += np.prod(x ** np.asarray(e), axis=1)[:, None] * c
    return out


def _random_trig(x: np.ndarray, side: float, degree: int, count: int, rng: np.random.Generator) -> np.ndarray:
    modes = _exponents(x.shape[1], degree)
    out = np.zeros((x.shape[0], count))
    for m in modes:
        wave = 2.0 * np.pi * (x @ np.asarray(m, float)) / side
        amplitude = rng.standard_normal(count) / (1.0 + sum(m) ** 2)
        phase = rng.uniform(0.0, 2.0 * np.pi, count)
        out += amplitude * np.cos(wave[:, None] + phase)
    return out


def _ambient_values(grid: ChartedGrid, degree: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if degree < 0:
        raise ConfigurationError(f"band degree must be non-negative, got {degree}")
    if grid.topology == "flat-box":
        return _random_trig(grid.ambient, grid.descriptor.side, degree, count, rng)
    return _random_polynomials(_normalized_ambient(grid), degree, count, rng)


def random_scalar(grid: ChartedGrid, rng: np.random.Generator, degree: int = 3) -> TensorField:
    return TensorField.scalar(grid, _ambient_values(grid, degree, 1, rng)[:, 0])


def random_one_form(grid: ChartedGrid, rng: np.random.Generator, degree: int = 3) -> TensorField:
    """Tangential part of a random ambient vector field, as chart components."""
    m = grid.tangents.shape[2]
    vector = _ambient_values(grid, degree, m, rng)
    return TensorField.one_form(grid, np.einsum('pam,pm->pa', grid.tangents, vector))


def random_sym_tensor(grid: ChartedGrid, rng: np.random.Generator, degree: int = 3) -> TensorField:
    """Tangential restriction of a random symmetric ambient matrix field."""
    m = grid.tangents.shape[2]
    entries = _ambient_values(grid, degree, m * m, rng).reshape(grid.npts, m, m)
    entries = 0.5 * (entries + np.swapaxes(entries, 1, 2))
    return TensorField.sym_tensor(grid, np.einsum('pam,pmk,pbk->pab', grid.tangents, entries, grid.tangents))


def l1_harmonic(grid: ChartedGrid, axis: int = 0, factor: int = 0) -> TensorField:
    """Ambient coordinate x_axis of a sphere factor: a first spherical harmonic."""
    fac = grid.factors[factor]
    if fac.kind != "sphere":
        raise ConfigurationError("first harmonics exist on sphere factors only")
    coords = grid.ambient[:, grid.ambient_slice(factor)]
    return TensorField.scalar(grid, coords[:, axis] * np.sqrt(fac.curvature))


def killing_one_form(grid: ChartedGrid, axis: int = 2, factor: int = 0) -> TensorField:
    """Metric dual of the rotation field about an ambient axis of a sphere factor."""
    fac = grid.factors[factor]
    if fac.kind != "sphere":
        raise ConfigurationError("rotation fields exist on sphere factors only")
    s = grid.ambient_slice(factor)
    direction = np.zeros(3)
    direction[axis] = 1.0
    vector = np.zeros((grid.npts, grid.tangents.shape[2]))
    vector[:, s] = np.cross(direction, grid.ambient[:, s])
    return TensorField.one_form(grid, np.einsum('pam,pm->pa', grid.tangents, vector))


def monomial(grid: ChartedGrid, powers: Tuple[int, ...]) -> TensorField:
    """x_1^{p_1} ... x_n^{p_n} in the flat box coordinates."""
    if grid.topology != "flat-box":
        raise ConfigurationError("monomials are defined on the flat box")
    return TensorField.scalar(grid, np.prod(grid.coords ** np.asarray(powers), axis=1))
