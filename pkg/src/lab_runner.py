"""
Execute the analyses of a RunConfig against one zoo soliton.

The soliton is built first; a geometry that is not a normalized shrinker at
tau = 1 aborts the run with a configuration error. Analyses then run in
dependency order, concurrently when SOLITON_LAB_THREADS allows, and every
module error is captured in its own AnalysisResult. Files are written at the
end, from the calling thread.
"""
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from band_limited import l1_harmonic, monomial, random_one_form, random_scalar, random_sym_tensor
from curvature_calculus import ricci_identity_residual
from errors import (EXIT_CHECK_FAILED, EXIT_OK, ConfigurationError, NumericalCheckError, SolitonLabError,
                    exit_code_for)
from grid_geometry import TensorField, factor_metric, grid_summary, stack_fields, volume
from helper import PROJECT_VERSION
from run_config import AnalysisResult, Check, Report, RunConfig
from soliton_calculus import (SolitonStructure, adjointness_defect, identity_residuals, ricci_relations, lie_metric,
                              self_adjointness_defect, weighted_inner, weighted_norm)
from variation_analysis import (SolverSettings, SpectralReport, convergence_study, drift_laplacian_spectrum,
                                eigen_relation_checks, invariance_checks, jacobi, second_variation, spectrum,
                                stability_verdict, w_functional)
from zoo import build_soliton

THREADS_VARIABLE = "SOLITON_LAB_THREADS"
UPPER_BOUND = 0.25
ROUNDOFF_FLOOR = 1e-11
# numeric failures outside the lab's hierarchy, reported per analysis as numerical errors
NUMERIC_ERRORS = (np.linalg.LinAlgError, ArithmeticError)
# L_f on Im(div_f^dagger) of the round shrinker: 0 three times (conformal fields), then -1
SPHERE_IMDIV_ZERO_TOLERANCE = 0.02
SPHERE_IMDIV_NEXT = -1.0
SPHERE_IMDIV_NEXT_TOLERANCE = 0.05

Artifacts = Dict[str, np.ndarray]


@dataclass
class RunContext:
    config: RunConfig
    soliton: SolitonStructure
    settings: SolverSettings
    threads: int = 1


@dataclass
class RunOutcome:
    report: Report
    artifacts: Artifacts = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)
    paths: List[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return self.report.exit_code


def thread_count() -> int:
    """Worker threads from SOLITON_LAB_THREADS (default 1)."""
    raw = os.getenv(THREADS_VARIABLE, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_VARIABLE} must be a positive integer, got '{raw}'")
    if threads < 1:
        raise ConfigurationError(f"{THREADS_VARIABLE} must be a positive integer, got {threads}")
    return threads


def make_check(name: str, value: Optional[float], tolerance: float, comparison: str = "<=",
               expected: Optional[float] = None) -> Check:
    if value is None or not np.isfinite(value):
        passed = False
    elif comparison == "<=":
        passed = value <= tolerance
    elif comparison == "<":
        passed = value < tolerance
    elif comparison == ">=":
        passed = value >= tolerance
    elif comparison == ">":
        passed = value > tolerance
    else:
        passed = abs(value - expected) <= tolerance
    return Check(name=name, value=value, tolerance=tolerance, comparison=comparison, expected=expected,
                 passed=bool(passed))


def _rng(ctx: RunContext, stream: int) -> np.random.Generator:
    return np.random.default_rng([ctx.config.seed, stream])


def _spectrum_rows(report: SpectralReport, tolerance: float) -> List[dict]:
    return [{"index": i, "eigenvalue": value, "residual": residual, "converged": converged, "tolerance": tolerance}
            for i, (value, residual, converged) in enumerate(zip(report.eigenvalues, report.residuals,
                                                                report.converged))]


def _spectrum_data(report: SpectralReport, tolerance: float) -> dict:
    return {
        "subspace": report.subspace,
        "trivial": report.trivial,
        "eigenvalues": _spectrum_rows(report, tolerance),
        "operator_asymmetry": report.asymmetry,
        "projector_residual": report.projector_residual,
        "operator_applications": report.iterations,
        "restarts": report.restarts,
    }


def _leading_residual_check(report: SpectralReport, tolerance: float) -> List[Check]:
    if not report.eigenvalues:
        return []
    return [make_check("leading_residual", report.residuals[0], tolerance)]


# analyses

def analyze_identities(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    grid = soliton.grid
    rng = _rng(ctx, 1)
    degree = ctx.config.band_degree
    u, w, h = random_scalar(grid, rng, degree), random_one_form(grid, rng, degree), random_sym_tensor(grid, rng, degree)
    residuals = identity_residuals(soliton, u, w, h, workers=ctx.threads)
    checks = [make_check(name, value, tol.identity) for name, value in residuals.items()]

    second_u, second_h = random_scalar(grid, rng, degree), random_sym_tensor(grid, rng, degree)
    checks.append(make_check("ricci_identity", ricci_identity_residual(soliton.curvature, w), tol.identity))
    if soliton.fixture:
        # integration by parts leaves boundary terms on the truncated box
        checks.extend(_gaussian_oracle_checks(soliton, tol.identity))
    else:
        checks.append(make_check("weighted_adjointness", adjointness_defect(soliton, w, h), tol.identity))
        checks.append(make_check("drift_laplacian_symmetry", self_adjointness_defect(soliton, u, second_u),
                                 tol.identity))
        checks.append(make_check("lichnerowicz_symmetry", self_adjointness_defect(soliton, h, second_h),
                                 tol.identity))
    data = {
        "band_degree": degree,
        "interior_only": soliton.fixture,
        "residuals": [{"identity": name, "residual": value, "tolerance": tol.identity}
                      for name, value in residuals.items()],
    }
    return AnalysisResult(name="identities", checks=checks, data=data), {}


def _gaussian_oracle_checks(soliton: SolitonStructure, tolerance: float) -> List[Check]:
    """u = x1 x2 on the Gaussian soliton: grad u = (x2, x1, 0..) and Delta_f u = -u."""
    grid = soliton.grid
    ops = soliton.operators
    powers = (1, 1) + (0,) * (grid.dimension - 2)
    u = monomial(grid, powers)
    expected_gradient = np.zeros((grid.npts, grid.dimension))
    expected_gradient[:, 0] = grid.coords[:, 1]
    expected_gradient[:, 1] = grid.coords[:, 0]
    fu = ops.frame_of(u)
    grad = ops.gradient(fu)
    expected = ops.frame_of(TensorField.one_form(grid, expected_gradient))
    return [
        make_check("oracle_gradient", ops.relative(grad, expected), tolerance),
        make_check("oracle_drift_laplacian", ops.relative(ops.delta_f(fu), -fu), tolerance),
    ]


def analyze_ricci_relations(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    values = ricci_relations(soliton)
    checks = [make_check(name, values[name], tol.ricci_relation)
              for name in ("divergence_of_ricci", "lichnerowicz_of_ricci", "jacobi_of_ricci",
                           "scalar_curvature_equation")]
    if values["ricci_energy_ratio"] is not None:
        checks.append(make_check("ricci_energy_ratio", values["ricci_energy_ratio"], tol.energy_ratio,
                                 "abs-diff<=", expected=0.5))
    data: dict = {"values": values}
    if not soliton.fixture:
        ratios = _lie_derivative_jacobi(ctx)
        data["jacobi_of_lie_derivative"] = ratios
        checks.append(make_check("jacobi_of_lie_derivative", max(ratios), tol.identity))
    return AnalysisResult(name="ricci-relations", checks=checks, data=data), {}


def _lie_derivative_jacobi(ctx: RunContext) -> List[float]:
    """||N_f L_w g|| / ||L_w g|| for `samples` random 1-forms w."""
    soliton = ctx.soliton
    rng = _rng(ctx, 2)
    ratios = []
    for _ in range(ctx.config.samples):
        xi = lie_metric(soliton, random_one_form(soliton.grid, rng, ctx.config.band_degree))
        ratios.append(weighted_norm(soliton, jacobi(soliton, xi, ctx.settings)) / weighted_norm(soliton, xi))
    return ratios


def analyze_eigen_relations(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    tol = ctx.config.tolerances
    values = eigen_relation_checks(ctx.soliton, l1_harmonic(ctx.soliton.grid))
    checks = [make_check("rayleigh_quotient", values["rayleigh_quotient"], tol.eigen, "abs-diff<=", expected=0.0)]
    checks.extend(make_check(name, values[name], tol.eigen_relation)
                  for name in ("eigen_pair", "propagation_double_divergence", "propagation_hessian",
                               "divergence_eigen_relation"))
    return AnalysisResult(name="eigen-relations", checks=checks, data={"values": values}), {}


def analyze_invariance(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    rng = _rng(ctx, 3)
    worst: Dict[str, float] = {}
    for _ in range(ctx.config.samples):
        w = random_one_form(soliton.grid, rng, ctx.config.band_degree)
        h = random_sym_tensor(soliton.grid, rng, ctx.config.band_degree)
        for name, value in invariance_checks(soliton, w, h, ctx.settings).items():
            worst[name] = max(worst.get(name, 0.0), value)
    checks = [make_check(name, value, tol.invariance) for name, value in worst.items()]
    return AnalysisResult(name="invariance", checks=checks, data={"samples": ctx.config.samples}), {}


def analyze_convergence(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    config = ctx.config
    tol = config.tolerances
    resolutions = sorted(set(config.convergence_resolutions))

    def build(descriptor, n):
        return build_soliton(descriptor, n, tol.soliton)

    study = convergence_study(config.descriptor, resolutions, seed=config.seed, degree=config.band_degree,
                              build=build)
    rows = study["rows"]
    first, last = rows[0], rows[-1]
    span = np.log(last["resolution"] / first["resolution"])
    checks, overall = [], {}
    for name, r_first in first["residuals"].items():
        r_last = last["residuals"][name]
        # identities exact to round-off have no observable order
        if r_first <= ROUNDOFF_FLOOR or r_last <= ROUNDOFF_FLOOR:
            overall[name] = None
            continue
        overall[name] = float(np.log(r_first / r_last) / span)
        checks.append(make_check(f"order_{name}", overall[name], tol.convergence_order, "abs-diff<=", expected=2.0))
    data = {
        "rows": [{"resolution": r["resolution"], "spacing": r["spacing"], "residuals": r["residuals"]} for r in rows],
        "orders": study["orders"],
        "overall_orders": overall,
    }
    return AnalysisResult(name="convergence", checks=checks, data=data), {}


def analyze_imdiv_spectrum(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    tol = ctx.config.tolerances
    report = spectrum(ctx.soliton, "im-div-dagger", ctx.config.spectrum_count, ctx.settings)
    converged = [v for v, c in zip(report.eigenvalues, report.converged) if c]
    checks = _leading_residual_check(report, tol.eigen)
    checks.append(make_check("largest_converged_eigenvalue", max(converged), UPPER_BOUND - tol.bound, "<"))
    checks.append(make_check("projector_idempotence", report.projector_residual, tol.projection))
    if ctx.soliton.grid.descriptor.name == "sphere":
        checks.extend(_round_sphere_imdiv_checks(report.eigenvalues))
    data = _spectrum_data(report, tol.eigen)
    data["upper_bound"] = UPPER_BOUND
    return (AnalysisResult(name="spectrum-imdiv", checks=checks, data=data),
            {"spectrum-imdiv": stack_fields(report.eigentensors)})


def _round_sphere_imdiv_checks(eigenvalues: List[float]) -> List[Check]:
    checks = [make_check(f"conformal_eigenvalue_{i}", value, SPHERE_IMDIV_ZERO_TOLERANCE, "abs-diff<=", expected=0.0)
              for i, value in enumerate(eigenvalues[:3])]
    if len(eigenvalues) > 3:
        checks.append(make_check("next_eigenvalue", eigenvalues[3], SPHERE_IMDIV_NEXT_TOLERANCE, "abs-diff<=",
                                 expected=SPHERE_IMDIV_NEXT))
    return checks


def analyze_ker0_spectrum(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    tol = ctx.config.tolerances
    report = spectrum(ctx.soliton, "ker-div0", ctx.config.spectrum_count, ctx.settings, band=ctx.config.verdict_band)
    data = _spectrum_data(report, tol.eigen)
    artifacts = {"spectrum-ker0": stack_fields(report.eigentensors)} if report.eigentensors else {}
    return AnalysisResult(name="spectrum-ker0", checks=_leading_residual_check(report, tol.eigen), data=data), artifacts


def analyze_scalar_spectrum(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    tol = ctx.config.tolerances
    report = drift_laplacian_spectrum(ctx.soliton, ctx.config.spectrum_count, ctx.settings)
    first = -report.eigenvalues[0]
    checks = _leading_residual_check(report, tol.eigen)
    checks.append(make_check("first_nonzero_eigenvalue", first, 0.5, ">"))
    data = _spectrum_data(report, tol.eigen)
    data["first_nonzero_eigenvalue"] = first
    return AnalysisResult(name="scalar-spectrum", checks=checks, data=data), {}


def _factor_difference(soliton: SolitonStructure) -> TensorField:
    if soliton.grid.descriptor.name != "product":
        raise ConfigurationError("factor-difference needs a product manifold")
    return factor_metric(soliton.grid, 0) - factor_metric(soliton.grid, 1)


def _cosine(soliton: SolitonStructure, a: TensorField, b: TensorField) -> float:
    return abs(weighted_inner(soliton, a, b)) / (weighted_norm(soliton, a) * weighted_norm(soliton, b))


def analyze_verdict(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    verdict = stability_verdict(soliton, band=ctx.config.verdict_band, count=3, settings=ctx.settings)
    report = verdict.report
    data = {
        "status": verdict.status,
        "note": verdict.note,
        "top_eigenvalue": verdict.top_eigenvalue,
        "band": verdict.band,
        "trivial": report.trivial,
        "witness_second_variation": verdict.witness_second_variation,
        "spectrum": _spectrum_data(report, tol.eigen),
    }
    checks = []
    if report.trivial:
        checks.append(make_check("kernel_probe_norm", report.projector_residual, verdict.band))
    artifacts = {}
    if verdict.witness is not None:
        artifacts["verdict-witness"] = verdict.witness.components
        if verdict.status == "unstable":
            checks.append(make_check("witness_second_variation", verdict.witness_second_variation, 0.0, ">"))
        if soliton.grid.descriptor.name == "product":
            cosine = _cosine(soliton, verdict.witness, _factor_difference(soliton))
            data["witness_factor_difference_cosine"] = cosine
            checks.append(make_check("witness_factor_difference_cosine", cosine, tol.alignment, ">="))
    return AnalysisResult(name="verdict", checks=checks, data=data), artifacts


def _named_tensors(ctx: RunContext) -> List[Tuple[str, str, TensorField]]:
    """(row label, tensor kind, tensor) for every requested named tensor."""
    soliton = ctx.soliton
    rng = _rng(ctx, 4)
    out = []
    for kind in ctx.config.second_variation_tensors:
        if kind == "ricci":
            out.append((kind, kind, soliton.ricci))
        elif kind == "metric":
            out.append((kind, kind, soliton.metric))
        elif kind == "factor-difference":
            out.append((kind, kind, _factor_difference(soliton)))
        else:
            for i in range(ctx.config.samples):
                if kind == "lie-derivative":
                    t = lie_metric(soliton, random_one_form(soliton.grid, rng, ctx.config.band_degree))
                else:
                    t = random_sym_tensor(soliton.grid, rng, ctx.config.band_degree)
                out.append((f"{kind}[{i}]", kind, t))
    return out


def analyze_second_variation(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    expected_kernel = {"ricci": tol.ricci_relation, "metric": tol.ricci_relation, "lie-derivative": tol.identity}
    rows, checks = [], []
    for label, kind, h in _named_tensors(ctx):
        value = second_variation(soliton, h, ctx.settings)
        ratio = weighted_norm(soliton, jacobi(soliton, h, ctx.settings)) / weighted_norm(soliton, h)
        rows.append({"tensor": label, "second_variation": value, "jacobi_relative_norm": ratio})
        if kind in expected_kernel:
            checks.append(make_check(f"jacobi_{label}", ratio, expected_kernel[kind]))
        elif kind == "factor-difference":
            checks.append(make_check("second_variation_factor_difference", value, 0.0, ">"))
    return AnalysisResult(name="second-variation", checks=checks, data={"tensors": rows}), {}


def expected_entropy(soliton: SolitonStructure) -> Tuple[float, float]:
    """Closed-form (potential, W) of an Einstein zoo member: f = log(vol (4 pi)^{-n/2}), W = R + f - n."""
    d = soliton.grid.descriptor
    n = soliton.dimension
    potential = float(np.log(volume(soliton.grid) * (4.0 * np.pi) ** (-n / 2.0)))
    scalar = float(sum(2.0 * k for k in d.curvatures))
    return potential, scalar + potential - n


def analyze_w_functional(ctx: RunContext) -> Tuple[AnalysisResult, Artifacts]:
    soliton, tol = ctx.soliton, ctx.config.tolerances
    value = w_functional(soliton.grid, soliton.metric, soliton.potential, 1.0,
                         normalization_tolerance=max(tol.normalization, soliton.normalization_defect))
    potential, expected = expected_entropy(soliton)
    mean_potential = float(np.mean(soliton.potential.components))
    checks = [
        make_check("w_functional", value, tol.w_functional, "abs-diff<=", expected=expected),
        make_check("normalized_potential", mean_potential, tol.w_functional, "abs-diff<=", expected=potential),
    ]
    return AnalysisResult(name="w-functional", checks=checks, data={"value": value, "potential": mean_potential}), {}


ANALYSES: Dict[str, Callable[[RunContext], Tuple[AnalysisResult, Artifacts]]] = {
    "identities": analyze_identities,
    "ricci-relations": analyze_ricci_relations,
    "eigen-relations": analyze_eigen_relations,
    "invariance": analyze_invariance,
    "convergence": analyze_convergence,
    "spectrum-imdiv": analyze_imdiv_spectrum,
    "spectrum-ker0": analyze_ker0_spectrum,
    "scalar-spectrum": analyze_scalar_spectrum,
    "verdict": analyze_verdict,
    "second-variation": analyze_second_variation,
    "w-functional": analyze_w_functional,
}


def _execute(name: str, ctx: RunContext) -> Tuple[AnalysisResult, Artifacts, float]:
    logger.info(f"Analysis '{name}' started")
    start = time.perf_counter()
    try:
        result, artifacts = ANALYSES[name](ctx)
    except SolitonLabError as e:
        logger.error(f"Analysis '{name}' failed with {e.category} error: {e}")
        result = AnalysisResult(name=name, status="error", error=str(e), category=e.category,
                                exit_code=exit_code_for(e))
        artifacts = {}
    except NUMERIC_ERRORS as e:
        logger.error(f"Analysis '{name}' failed with numerical error: {type(e).__name__}: {e}")
        result = AnalysisResult(name=name, status="error", error=f"{type(e).__name__}: {e}",
                                category=NumericalCheckError.category, exit_code=exit_code_for(e))
        artifacts = {}
    else:
        if not all(c.passed for c in result.checks):
            result.status = "failed"
            result.exit_code = EXIT_CHECK_FAILED
            failed = [c.name for c in result.checks if not c.passed]
            logger.warning(f"Analysis '{name}' has failed checks: {', '.join(failed)}")
    elapsed = time.perf_counter() - start
    logger.info(f"Analysis '{name}' finished in {elapsed:.2f}s with status {result.status}")
    return result, artifacts, elapsed


def _aborted_report(config: RunConfig, error: SolitonLabError) -> Report:
    result = AnalysisResult(name="build", status="error", error=str(error), category=error.category,
                            exit_code=exit_code_for(error))
    return Report(version=PROJECT_VERSION, config=config.model_dump(), analyses=[result], status="error",
                  exit_code=result.exit_code)


def run(config: RunConfig, threads: Optional[int] = None, write: bool = True) -> RunOutcome:
    """
    Build the configured soliton and run the requested analyses.

    Args:
        config: Validated run configuration.
        threads: Concurrent analyses; read from SOLITON_LAB_THREADS when None.
        write: Write report files (and plots when enabled) to config.output_dir.

    Returns:
        RunOutcome whose exit_code is the most severe code among the analyses.
    """
    threads = thread_count() if threads is None else max(1, threads)
    timing: Dict[str, float] = {}
    start = time.perf_counter()
    try:
        soliton = build_soliton(config.descriptor, config.resolution, config.tolerances.soliton)
    except SolitonLabError as e:
        logger.error(f"Cannot build {config.manifold} at N={config.resolution}: {e}")
        outcome = RunOutcome(report=_aborted_report(config, e))
    else:
        timing["build"] = time.perf_counter() - start
        ctx = RunContext(config=config, soliton=soliton, settings=config.solver_settings(), threads=threads)
        names = config.ordered_analyses()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            executed = list(pool.map(lambda name: _execute(name, ctx), names))

        results, artifacts = [], {}
        for name, (result, produced, elapsed) in zip(names, executed):
            results.append(result)
            artifacts.update(produced)
            timing[name] = elapsed
        exit_code = max([EXIT_OK] + [r.exit_code for r in results])
        if any(r.status == "error" for r in results):
            status = "error"
        elif exit_code != EXIT_OK:
            status = "failed"
        else:
            status = "ok"
        soliton_block = {**grid_summary(soliton.grid), **soliton.diagnostics()}
        report = Report(version=PROJECT_VERSION, config=config.model_dump(), soliton=soliton_block,
                        analyses=results, status=status, exit_code=exit_code)
        outcome = RunOutcome(report=report, artifacts=artifacts, timing=timing)

    timing["total"] = time.perf_counter() - start
    if write:
        from report_writer import write_report

        outcome.paths = write_report(outcome, Path(config.output_dir), plots=config.plots)
    logger.info(f"Run of {config.manifold} finished with exit code {outcome.exit_code}")
    return outcome
