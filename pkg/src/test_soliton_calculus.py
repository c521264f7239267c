import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from band_limited import killing_one_form, monomial, random_one_form, random_scalar, random_sym_tensor
from curvature_calculus import rough_laplacian
from errors import ConfigurationError, NotASolitonError
from grid_geometry import ManifoldDescriptor, TensorField, build_grid, zoo_metric
from soliton_calculus import (IDENTITY_NAMES, adjointness_defect, delta_f, div_f, div_f_dagger, identity_residuals,
                              ricci_relations, lichnerowicz, lie_metric, make_soliton, self_adjointness_defect,
                              weighted_norm)
from zoo import make_gaussian_fixture, make_round_sphere

IDENTITY_TOLERANCE = 5e-3


@pytest.fixture(scope="module")
def sphere():
    return make_round_sphere(0.5, 24)


@pytest.fixture(scope="module")
def gaussian():
    return make_gaussian_fixture(2, 8.0, 64)


def fields(soliton, seed=0, degree=2):
    rng = np.random.default_rng(seed)
    grid = soliton.grid
    return random_scalar(grid, rng, degree), random_one_form(grid, rng, degree), random_sym_tensor(grid, rng, degree)


def test_round_sphere_is_normalized(sphere):
    assert np.allclose(sphere.potential.components, np.log(2.0), atol=1e-10)
    assert sphere.residual <= 1e-10
    assert sphere.normalization_defect <= 1e-10
    assert sphere.diagnostics()["fixture"] is False


def test_wrong_curvature_is_not_a_shrinker():
    with pytest.raises(NotASolitonError):
        make_round_sphere(1.0, 24)


def test_tau_rescaling():
    grid = build_grid(ManifoldDescriptor("sphere", (0.25,), 2), 16)
    # K = 1/4 shrinks with tau = 2; the normalized soliton lives on K = 1/2
    soliton = make_soliton(grid, zoo_metric(grid), TensorField.zeros(grid, 0), tau=2.0)
    assert soliton.grid.descriptor.curvatures[0] == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ConfigurationError):
        make_soliton(grid, zoo_metric(grid), TensorField.zeros(grid, 0), tau=-1.0)


def test_gaussian_fixture_at_coarse_resolution():
    coarse = make_gaussian_fixture(2, 8.0, 16)
    inside = coarse.grid.coords[coarse.grid.mask]
    assert inside.shape[0] > 0
    assert np.all(np.abs(inside) < 8.0 * (0.5 - 5.0 / 16.0))
    assert coarse.residual < 1e-8


def test_gaussian_fixture_potential(gaussian):
    grid = gaussian.grid
    shift = gaussian.potential.components - np.sum(grid.coords ** 2, axis=1) / 4.0
    assert np.ptp(shift) < 1e-12
    assert gaussian.fixture
    assert gaussian.residual < 1e-8


def test_identities_on_sphere(sphere):
    residuals = identity_residuals(sphere, *fields(sphere), workers=2)
    assert list(residuals) == list(IDENTITY_NAMES)
    for name, value in residuals.items():
        assert value <= IDENTITY_TOLERANCE, name


def test_identities_on_gaussian_fixture(gaussian):
    residuals = identity_residuals(gaussian, *fields(gaussian))
    for name, value in residuals.items():
        assert value <= IDENTITY_TOLERANCE, name


def test_gaussian_symbolic_oracle(gaussian):
    grid = gaussian.grid
    u = monomial(grid, (1, 1))
    result = delta_f(gaussian, u).components
    inside = grid.mask
    assert np.allclose(result[inside], -u.components[inside], atol=1e-8)


def test_identity_residuals_checks_ranks(sphere):
    u, w, h = fields(sphere)
    with pytest.raises(ConfigurationError):
        identity_residuals(sphere, w, u, h)


def test_drift_laplacian_is_rough_laplacian_on_einstein(sphere):
    u, w, h = fields(sphere, seed=1)
    for t in (u, w, h):
        assert np.allclose(delta_f(sphere, t).components, rough_laplacian(t).components, atol=1e-9)


def test_weighted_adjointness(sphere):
    u, w, h = fields(sphere, seed=2)
    second_u, _, second_h = fields(sphere, seed=3)
    assert adjointness_defect(sphere, w, h) <= IDENTITY_TOLERANCE
    assert self_adjointness_defect(sphere, u, second_u) <= IDENTITY_TOLERANCE
    assert self_adjointness_defect(sphere, h, second_h) <= IDENTITY_TOLERANCE


def test_killing_fields_span_the_kernel_of_the_adjoint(sphere):
    w = killing_one_form(sphere.grid)
    assert weighted_norm(sphere, lie_metric(sphere, w)) <= 1e-2 * weighted_norm(sphere, w)
    dagger = div_f_dagger(sphere, w)
    assert np.allclose(dagger.components, -0.5 * lie_metric(sphere, w).components, atol=1e-12)


def test_operator_rank_errors(sphere):
    u, w, h = fields(sphere)
    with pytest.raises(ConfigurationError):
        div_f(sphere, u)
    with pytest.raises(ConfigurationError):
        div_f_dagger(sphere, h)
    with pytest.raises(ConfigurationError):
        lichnerowicz(sphere, w)
    with pytest.raises(ConfigurationError):
        lie_metric(sphere, h)


def test_lichnerowicz_of_metric(sphere):
    # L_f g = Rm(g) = Rc = g / 2 on the round sphere
    result = lichnerowicz(sphere, sphere.metric)
    assert np.allclose(result.components, 0.5 * sphere.metric.components, atol=1e-8)


def test_ricci_relations_on_sphere(sphere):
    values = ricci_relations(sphere)
    assert values["divergence_of_ricci"] <= 1e-3
    assert values["lichnerowicz_of_ricci"] <= 1e-3
    assert values["jacobi_of_ricci"] <= 1e-3
    assert values["scalar_curvature_equation"] <= 1e-3
    assert values["ricci_energy_ratio"] == pytest.approx(0.5, abs=1e-4)


def test_ricci_relations_on_fixture_are_trivial(gaussian):
    values = ricci_relations(gaussian)
    assert values["ricci_energy_ratio"] is None
    assert values["divergence_of_ricci"] == 0.0
