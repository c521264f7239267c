import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from band_limited import l1_harmonic, random_one_form, random_sym_tensor
from errors import ConfigurationError, NotASolitonError
from grid_geometry import ManifoldDescriptor, TensorField, factor_metric, zoo_metric
from soliton_calculus import lie_metric, ricci_relations, weighted_inner, weighted_norm
from variation_analysis import (SolverSettings, _probe_tensors, convergence_study, decompose,
                                drift_laplacian_spectrum, eigen_relation_checks, invariance_checks, jacobi,
                                second_variation, solve_vhat, spectrum, stability_verdict, w_functional)
from zoo import make_gaussian_fixture, make_product, make_round_sphere


@pytest.fixture(scope="module")
def sphere():
    return make_round_sphere(0.5, 24)


@pytest.fixture(scope="module")
def product():
    return make_product(0.5, 0.5, 8)


def cosine(soliton, a, b):
    return abs(weighted_inner(soliton, a, b)) / (weighted_norm(soliton, a) * weighted_norm(soliton, b))


def test_vhat_of_ricci_vanishes(sphere):
    v = solve_vhat(sphere, sphere.ricci)
    assert np.max(np.abs(v.components)) < 1e-8


def test_probe_tensors_follow_band_degree(sphere):
    low = _probe_tensors(sphere, 2, 1, 5)
    assert all(np.array_equal(a, b) for a, b in zip(low, _probe_tensors(sphere, 2, 1, 5)))
    high = _probe_tensors(sphere, 2, 3, 5)
    assert not any(np.allclose(a, b) for a, b in zip(low, high))


def test_vhat_is_mean_zero(sphere):
    h = random_sym_tensor(sphere.grid, np.random.default_rng(1))
    v = solve_vhat(sphere, h)
    f = sphere.potential.components
    mean = np.sum(sphere.grid.weights * np.exp(-f) * v.components)
    assert abs(mean) <= 1e-8 * np.sum(sphere.grid.weights * np.abs(v.components))


def test_ricci_is_in_the_jacobi_kernel(sphere):
    result = jacobi(sphere, sphere.ricci)
    assert weighted_norm(sphere, result) <= 1e-3 * weighted_norm(sphere, sphere.ricci)


def test_lie_derivatives_are_in_the_jacobi_kernel(sphere):
    w = random_one_form(sphere.grid, np.random.default_rng(2), 2)
    h = lie_metric(sphere, w)
    assert weighted_norm(sphere, jacobi(sphere, h)) <= 5e-3 * weighted_norm(sphere, h)
    assert abs(second_variation(sphere, h)) <= 5e-3 * weighted_norm(sphere, h) ** 2


def test_w_functional_on_sphere(sphere):
    value = w_functional(sphere.grid, sphere.metric, sphere.potential)
    assert value == pytest.approx(np.log(2.0) - 1.0, abs=1e-4)


def test_w_functional_rejects_unnormalized_potential(sphere):
    with pytest.raises(NotASolitonError):
        w_functional(sphere.grid, sphere.metric, TensorField.zeros(sphere.grid, 0))
    with pytest.raises(ConfigurationError):
        w_functional(sphere.grid, sphere.metric, sphere.potential, tau=0.0)


def test_decomposition_diagnostics(sphere):
    h = random_sym_tensor(sphere.grid, np.random.default_rng(3))
    result = decompose(sphere, h)
    d = result.diagnostics
    norm_sq = d["norm"] ** 2
    assert d["reconstruction_defect"] <= 1e-10 * d["norm"]
    assert d["h0_divergence"] <= 5e-2
    assert d["h0_ricci_overlap"] <= 1e-2
    assert d["h1_h0_cross"] <= 1e-2 * norm_sq
    assert d["ricci_h0_cross"] <= 1e-2 * norm_sq


def test_decomposition_of_a_lie_derivative_is_pure_image(sphere):
    w = random_one_form(sphere.grid, np.random.default_rng(4), 2)
    h = lie_metric(sphere, w)
    result = decompose(sphere, h)
    assert weighted_norm(sphere, result.h0) <= 1e-2 * weighted_norm(sphere, h)
    assert weighted_norm(sphere, result.h1 - h) <= 1e-2 * weighted_norm(sphere, h)


def test_metric_decomposes_into_ricci(sphere):
    result = decompose(sphere, zoo_metric(sphere.grid))
    # g = 2 Rc on the round sphere of curvature 1/2
    assert result.rho == pytest.approx(2.0, rel=1e-10)
    assert weighted_norm(sphere, result.h0) <= 1e-2 * weighted_norm(sphere, sphere.metric)


def test_drift_laplacian_spectrum_on_sphere(sphere):
    report = drift_laplacian_spectrum(sphere, 3)
    assert report.eigenvalues[0] == pytest.approx(-1.0, abs=0.02)
    assert all(v < 0 for v in report.eigenvalues)


def test_eigen_relations_on_sphere(sphere):
    checks = eigen_relation_checks(sphere, l1_harmonic(sphere.grid))
    assert checks["rayleigh_quotient"] == pytest.approx(0.0, abs=1e-2)
    for name, value in checks.items():
        if name != "rayleigh_quotient":
            assert value <= 1e-2, name


def test_spectra_need_a_compact_soliton():
    fixture = make_gaussian_fixture(2, 8.0, 32)
    with pytest.raises(ConfigurationError):
        spectrum(fixture, "ker-div0", 3)
    with pytest.raises(ConfigurationError):
        drift_laplacian_spectrum(fixture, 3)
    with pytest.raises(ConfigurationError):
        stability_verdict(fixture)


def test_spectrum_argument_errors(sphere):
    with pytest.raises(ConfigurationError):
        spectrum(sphere, "ker-div0", 0)
    with pytest.raises(ConfigurationError):
        spectrum(sphere, "traceless", 3)


def test_convergence_study_needs_two_resolutions():
    with pytest.raises(ConfigurationError):
        convergence_study(ManifoldDescriptor("sphere", (0.5,), 2), [16])


@pytest.mark.slow
def test_image_spectrum_on_sphere(sphere):
    report = spectrum(sphere, "im-div-dagger", 4)
    values = report.eigenvalues
    # gradients of the three first harmonics give the zero, second harmonics the -1
    assert np.allclose(values[:3], 0.0, atol=0.02)
    assert values[3] == pytest.approx(-1.0, abs=0.05)
    assert all(v < 0.25 for v in values)
    assert report.projector_residual <= 1e-2


@pytest.mark.slow
def test_sphere_is_stable_with_trivial_kernel(sphere):
    verdict = stability_verdict(sphere, settings=SolverSettings(probe_count=5))
    assert verdict.status == "stable"
    assert verdict.report.trivial
    assert verdict.top_eigenvalue is None


@pytest.mark.slow
def test_product_is_unstable_along_factor_difference(product):
    verdict = stability_verdict(product, settings=SolverSettings(probe_count=5))
    assert verdict.status == "unstable"
    assert verdict.top_eigenvalue == pytest.approx(0.5, abs=0.02)
    difference = factor_metric(product.grid, 0) - factor_metric(product.grid, 1)
    assert cosine(product, verdict.witness, difference) >= 0.99
    assert verdict.witness_second_variation > 0
    assert second_variation(product, difference) > 0


@pytest.mark.slow
def test_invariance_on_sphere(sphere):
    rng = np.random.default_rng(5)
    checks = invariance_checks(sphere, random_one_form(sphere.grid, rng, 2), random_sym_tensor(sphere.grid, rng, 2))
    for name, value in checks.items():
        assert value <= 5e-3, name


@pytest.mark.slow
def test_identity_residuals_converge_at_second_order():
    study = convergence_study(ManifoldDescriptor("sphere", (0.5,), 2), [16, 32])
    assert [row["resolution"] for row in study["rows"]] == [16, 32]
    for name, orders in study["orders"].items():
        first = study["rows"][0]["residuals"][name]
        if first < 1e-11:
            continue
        assert orders[0] == pytest.approx(2.0, abs=0.4), name


def factor_difference(product):
    return factor_metric(product.grid, 0) - factor_metric(product.grid, 1)


def test_w_functional_on_product(product):
    value = w_functional(product.grid, product.metric, product.potential)
    assert value == pytest.approx(np.log(4.0) - 2.0, abs=1e-4)


def test_factor_difference_lies_in_the_divergence_free_kernel(product):
    h = factor_difference(product)
    assert np.max(np.abs(solve_vhat(product, h).components)) < 1e-8
    result = decompose(product, h)
    assert result.iterations == 0
    assert result.rho == pytest.approx(0.0, abs=1e-12)
    assert weighted_norm(product, result.h1) <= 1e-8 * weighted_norm(product, h)
    assert weighted_norm(product, result.h0 - h) <= 1e-8 * weighted_norm(product, h)


@pytest.mark.slow
def test_jacobi_of_factor_difference(product):
    h = factor_difference(product)
    assert weighted_norm(product, jacobi(product, h) - 0.5 * h) <= 1e-8 * weighted_norm(product, h)


@pytest.mark.slow
def test_ricci_relations_on_product(product):
    values = ricci_relations(product)
    for name in ("divergence_of_ricci", "lichnerowicz_of_ricci", "jacobi_of_ricci", "scalar_curvature_equation"):
        assert values[name] <= 1e-3, name
    assert values["ricci_energy_ratio"] == pytest.approx(0.5, abs=1e-4)


@pytest.mark.slow
def test_lie_derivatives_are_in_the_jacobi_kernel_on_product(product):
    rng = np.random.default_rng(6)
    for _ in range(3):
        h = lie_metric(product, random_one_form(product.grid, rng, 1))
        assert weighted_norm(product, jacobi(product, h)) <= 5e-3 * weighted_norm(product, h)


@pytest.mark.slow
def test_invariance_on_product(product):
    rng = np.random.default_rng(7)
    checks = invariance_checks(product, random_one_form(product.grid, rng, 1), random_sym_tensor(product.grid, rng, 1))
    for name, value in checks.items():
        assert value <= 5e-3, name
