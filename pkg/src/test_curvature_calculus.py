import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from band_limited import l1_harmonic, monomial, random_one_form, random_scalar
from curvature_calculus import (covariant_derivative, curvature, curvature_action, gradient, hessian,
                                ricci_identity_residual, rough_laplacian)
from errors import ConfigurationError, NumericalCheckError
from grid_geometry import ManifoldDescriptor, TensorField, build_grid, inner_product, zoo_metric

SPHERE = ManifoldDescriptor("sphere", (0.5,), 2)
BOX = ManifoldDescriptor("flat-box", (), 2, 8.0)


@pytest.fixture(scope="module")
def sphere_grid():
    return build_grid(SPHERE, 24)


@pytest.fixture(scope="module")
def box_grid():
    return build_grid(BOX, 32)


def relative_error(a: TensorField, b: TensorField) -> float:
    diff = a - b
    return np.sqrt(inner_product(diff, diff) / inner_product(b, b))


def test_closed_form_sphere(sphere_grid):
    bundle = curvature(sphere_grid, zoo_metric(sphere_grid))
    assert np.allclose(bundle.scalar.components, 1.0)
    assert np.allclose(bundle.ricci.components, 0.5 * sphere_grid.metric)
    riemann = bundle.riemann
    assert np.allclose(riemann, -np.swapaxes(riemann, 1, 2))
    assert np.allclose(riemann, np.transpose(riemann, (0, 3, 4, 1, 2)))


def test_closed_form_flat_box(box_grid):
    bundle = curvature(box_grid, zoo_metric(box_grid))
    assert np.allclose(bundle.scalar.components, 0.0)
    assert np.allclose(bundle.ricci.components, 0.0)


@pytest.mark.slow
def test_closed_form_product():
    grid = build_grid(ManifoldDescriptor("product", (0.5, 0.5), 4), 8)
    bundle = curvature(grid, zoo_metric(grid))
    assert np.allclose(bundle.scalar.components, 2.0)
    assert np.allclose(bundle.ricci.components, 0.5 * grid.metric)
    # no curvature mixes the two factors
    assert np.allclose(bundle.riemann[:, 0, 2, 0, 2], 0.0)


def test_finite_difference_curvature_converges():
    errors = []
    for n in (16, 32):
        grid = build_grid(SPHERE, n)
        bundle = curvature(grid, zoo_metric(grid), "finite-difference")
        errors.append(np.max(np.abs(bundle.scalar.components - 1.0)))
    # the maximum sits on chart edges, which must converge with the interior
    assert errors[0] < 5e-2
    assert errors[1] < errors[0] / 3.5


def test_curvature_rejects_bad_metrics(sphere_grid):
    with pytest.raises(NumericalCheckError):
        curvature(sphere_grid, TensorField.sym_tensor(sphere_grid, -sphere_grid.metric))
    with pytest.raises(ConfigurationError):
        curvature(sphere_grid, TensorField.sym_tensor(sphere_grid, 2.0 * sphere_grid.metric))
    with pytest.raises(ConfigurationError):
        curvature(sphere_grid, zoo_metric(sphere_grid), "spectral")


def test_derivatives_of_constants_vanish(sphere_grid):
    one = TensorField.scalar(sphere_grid, 3.0)
    assert np.allclose(gradient(one).components, 0.0, atol=1e-12)
    assert np.allclose(hessian(one).components, 0.0, atol=1e-12)


def test_flat_polynomial_derivatives_are_exact(box_grid):
    u = monomial(box_grid, (1, 1))
    x, y = box_grid.coords[:, 0], box_grid.coords[:, 1]
    assert np.allclose(gradient(u).components, np.stack([y, x], axis=1), atol=1e-10)
    hess = hessian(u).components
    assert np.allclose(hess[:, 0, 1], 1.0, atol=1e-10)
    assert np.allclose(hess[:, 0, 0], 0.0, atol=1e-10)
    w = TensorField.one_form(box_grid, np.stack([y, x], axis=1))
    assert np.allclose(rough_laplacian(w).components, 0.0, atol=1e-9)


def test_first_harmonic_hessian_and_laplacian(sphere_grid):
    u = l1_harmonic(sphere_grid)
    g = zoo_metric(sphere_grid)
    assert relative_error(hessian(u), -0.5 * (g * u)) < 1e-2
    assert relative_error(rough_laplacian(u), -u) < 1e-2


def test_metric_is_parallel(sphere_grid):
    lap = rough_laplacian(zoo_metric(sphere_grid))
    assert np.max(np.abs(lap.components)) < 1e-8


def test_hessian_symmetric_and_traces_to_laplacian(sphere_grid):
    u = random_scalar(sphere_grid, np.random.default_rng(2), 2)
    hess = hessian(u)
    assert np.array_equal(hess.components, np.swapaxes(hess.components, 1, 2))
    trace = TensorField.scalar(sphere_grid, np.einsum('pij,pij->p', sphere_grid.metric_inv, hess.components))
    assert relative_error(trace, rough_laplacian(u)) < 1e-2


def test_ricci_identity_pins_the_sign(sphere_grid):
    bundle = curvature(sphere_grid, zoo_metric(sphere_grid))
    w = random_one_form(sphere_grid, np.random.default_rng(4), 2)
    assert ricci_identity_residual(bundle, w) < 5e-3


def test_ricci_identity_converges():
    residuals = []
    for n in (16, 32):
        grid = build_grid(SPHERE, n)
        w = random_one_form(grid, np.random.default_rng(4), 3)
        residuals.append(ricci_identity_residual(curvature(grid, zoo_metric(grid)), w))
    assert residuals[1] < residuals[0] / 3


def test_ricci_identity_on_flat_box(box_grid):
    bundle = curvature(box_grid, zoo_metric(box_grid))
    x, y = box_grid.coords[:, 0], box_grid.coords[:, 1]
    w = TensorField.one_form(box_grid, np.stack([x * y, x ** 2 - y], axis=1))
    assert ricci_identity_residual(bundle, w) < 1e-10


def test_metric_has_vanishing_covariant_derivative():
    for n in (16, 24):
        grid = build_grid(SPHERE, n)
        assert np.max(np.abs(covariant_derivative(zoo_metric(grid)))) < 1e-10


def test_covariant_derivative_of_scaled_metric():
    errors = []
    for n in (16, 32):
        grid = build_grid(SPHERE, n)
        u = l1_harmonic(grid)
        du = np.sqrt(0.5) * grid.tangents[:, :, 0]
        expected = du[:, :, None, None] * grid.metric[:, None, :, :]
        errors.append(np.max(np.abs(covariant_derivative(zoo_metric(grid) * u) - expected)))
    assert errors[0] < 1e-2
    assert errors[1] < errors[0] / 3


def test_covariant_derivative_of_constant_scalar(sphere_grid):
    one = TensorField.scalar(sphere_grid, 1.0)
    assert np.max(np.abs(covariant_derivative(one))) < 1e-12


def test_curvature_action_on_metric_is_ricci(sphere_grid):
    bundle = curvature(sphere_grid, zoo_metric(sphere_grid))
    action = curvature_action(bundle, zoo_metric(sphere_grid))
    assert np.allclose(action.components, bundle.ricci.components, atol=1e-12)


def test_unsupported_ranks(sphere_grid):
    u = random_scalar(sphere_grid, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        gradient(gradient(u))
    bundle = curvature(sphere_grid, zoo_metric(sphere_grid))
    with pytest.raises(ConfigurationError):
        ricci_identity_residual(bundle, u)
