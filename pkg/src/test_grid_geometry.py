import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from band_limited import random_scalar, random_sym_tensor
from errors import ConfigurationError, GridError, NumericalCheckError
from grid_geometry import (ManifoldDescriptor, TensorField, build_grid, integrate, inner_product,
                           pack_symmetric, pointwise_inner, unpack_symmetric, zoo_metric)

SPHERE = ManifoldDescriptor("sphere", (0.5,), 2)
BOX = ManifoldDescriptor("flat-box", (), 2, 8.0)
PRODUCT = ManifoldDescriptor("product", (0.5, 0.5), 4)


@pytest.fixture(scope="module")
def sphere_grid():
    return build_grid(SPHERE, 24)


@pytest.fixture(scope="module")
def box_grid():
    return build_grid(BOX, 64)


def test_sphere_grid_points_and_area(sphere_grid):
    assert sphere_grid.npts == 6 * 24 ** 2
    assert sphere_grid.weights.sum() == pytest.approx(8 * np.pi, rel=1e-3)


def test_flat_box_weight_is_exact(box_grid):
    assert box_grid.npts == 64 ** 2
    assert box_grid.weights.sum() == pytest.approx(64.0, abs=1e-10)
    assert box_grid.mask.sum() < box_grid.npts


def test_flat_box_interior_is_a_fixed_region():
    for n in (16, 24, 32):
        grid = build_grid(BOX, n)
        inside = np.abs(grid.coords[grid.mask])
        assert grid.mask.any()
        assert np.all(inside < 8.0 * (0.5 - 5.0 / 16.0))
        # every point two cells from the edge or closer is excluded
        assert np.all(inside < 4.0 - 2.0 * 8.0 / n)


def test_flat_box_margin_must_exclude_the_edge_stencils():
    with pytest.raises(GridError):
        build_grid(BOX, 16, margin=0.05)
    with pytest.raises(GridError):
        build_grid(BOX, 16, margin=0.5)


def test_product_grid_volume():
    grid = build_grid(PRODUCT, 8)
    assert grid.npts == (6 * 8 ** 2) ** 2
    assert grid.dimension == 4
    assert grid.weights.sum() == pytest.approx((8 * np.pi) ** 2, rel=1e-3)


def test_metric_is_positive_and_frame_orthonormal(sphere_grid):
    g = sphere_grid.metric
    assert np.all(np.linalg.eigvalsh(g) > 0)
    # frame[p, a, b] is chart component a of frame vector b
    frame = sphere_grid.frame
    gram = np.einsum('pab,pac,pcd->pbd', frame, g, frame)
    assert np.allclose(gram, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("descriptor,resolution", [
    (ManifoldDescriptor("torus", (0.5,), 2), 16),
    (SPHERE, 4),
    (ManifoldDescriptor("flat-box", (), 6, 8.0), 32),
])
def test_build_grid_rejects_bad_input(descriptor, resolution):
    with pytest.raises(GridError):
        build_grid(descriptor, resolution)


def test_integrate_plain_and_weighted(sphere_grid):
    one = TensorField.scalar(sphere_grid, 1.0)
    assert integrate(one) == pytest.approx(8 * np.pi, rel=1e-3)
    assert integrate(TensorField.zeros(sphere_grid, 0)) == 0.0
    f = TensorField.scalar(sphere_grid, np.log(2.0))
    assert integrate(one, "weighted", f) == pytest.approx(4 * np.pi, rel=1e-3)


def test_integrate_errors(sphere_grid, box_grid):
    one = TensorField.scalar(sphere_grid, 1.0)
    with pytest.raises(ConfigurationError):
        integrate(one, "weighted")
    with pytest.raises(ConfigurationError):
        integrate(one, "weighted", TensorField.scalar(box_grid, 0.0))
    with pytest.raises(NumericalCheckError):
        integrate(TensorField.scalar(sphere_grid, np.nan))


def test_integration_converges_at_second_order():
    errors = []
    for n in (16, 32):
        grid = build_grid(SPHERE, n)
        x, y, z = (grid.ambient * np.sqrt(0.5)).T
        # y z^3 integrates to zero; int e^x dA = 2 pi R^2 (e - 1/e)
        u = TensorField.scalar(grid, np.exp(x) + y * z ** 3)
        errors.append(abs(integrate(u) - 8 * np.pi * np.sinh(1.0)))
    assert errors[1] > 0
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_inner_product_of_metric(sphere_grid):
    g = zoo_metric(sphere_grid)
    f = TensorField.scalar(sphere_grid, np.log(2.0))
    assert inner_product(g, g, potential=f) == pytest.approx(8 * np.pi, rel=1e-3)


def test_metric_is_orthogonal_to_traceless_tensors(sphere_grid):
    g = zoo_metric(sphere_grid)
    h = random_sym_tensor(sphere_grid, np.random.default_rng(3))
    trace = pointwise_inner(g, h)
    traceless = h - g * TensorField.scalar(sphere_grid, trace / 2.0)
    assert abs(inner_product(g, traceless)) <= 1e-10 * inner_product(h, h)


def test_inner_product_gram_matrix_is_symmetric(sphere_grid):
    rng = np.random.default_rng(11)
    family = [random_sym_tensor(sphere_grid, rng) for _ in range(4)]
    gram = np.array([[inner_product(a, b) for b in family] for a in family])
    assert np.allclose(gram, gram.T, rtol=1e-13, atol=0)
    assert np.all(np.linalg.eigvalsh(gram) > 0)


def test_inner_product_rank_mismatch(sphere_grid):
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        inner_product(random_scalar(sphere_grid, rng), random_sym_tensor(sphere_grid, rng))


def test_tensor_field_validation_and_algebra(sphere_grid):
    with pytest.raises(ConfigurationError):
        TensorField(sphere_grid, 3, np.zeros((sphere_grid.npts, 2, 2, 2)))
    with pytest.raises(ConfigurationError):
        TensorField.one_form(sphere_grid, np.zeros((sphere_grid.npts, 3)))
    g = zoo_metric(sphere_grid)
    doubled = g + g
    assert np.allclose(doubled.components, 2 * g.components)
    assert np.allclose((doubled / 2).components, g.components)
    with pytest.raises(ValueError):
        g.components[0, 0, 0] = 1.0


def test_pack_unpack_preserves_dot_products():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((7, 3, 3))
    a = a + np.swapaxes(a, 1, 2)
    b = rng.standard_normal((7, 3, 3))
    b = b + np.swapaxes(b, 1, 2)
    assert np.allclose(unpack_symmetric(pack_symmetric(a), 3), a)
    assert np.allclose(np.sum(pack_symmetric(a) * pack_symmetric(b), axis=1), np.einsum('pij,pij->p', a, b))


def test_rescaled_grid_scales_volume(sphere_grid):
    scaled = sphere_grid.rescaled(2.0)
    assert scaled.descriptor.curvatures == (0.125,)
    assert scaled.weights.sum() == pytest.approx(4 * sphere_grid.weights.sum(), rel=1e-12)
