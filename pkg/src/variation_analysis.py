"""
Second variation of the entropy at a compact shrinking soliton.

Covers the constraint potential v_h, the Jacobi operator N_f, the quadratic
form, the W-functional, the splitting of symmetric 2-tensors into
Im(div_f^dagger), R.Rc and Ker(div_f)_0, spectra of L_f on those pieces and
the stability verdict.
"""
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from band_limited import random_one_form, random_scalar, random_sym_tensor
from curvature_calculus import curvature, gradient
from errors import ConfigurationError, NotASolitonError, NumericalCheckError
from grid_geometry import (ChartedGrid, ManifoldDescriptor, TensorField, pack_symmetric,
                           pointwise_inner, unpack_symmetric)
from krylov import EigenResult, block_krylov_eigen, gmres_solve
from soliton_calculus import (RELATIVE_EPSILON, SolitonStructure, WeightedOperators,
                              gaussian_normalization, identity_residuals)

SUBSPACES = ("im-div-dagger", "ker-div0", "full")
SCALAR_SUBSPACE = "scalar-mean-zero"

DEFAULT_SOLVER_TOLERANCE = 1e-10
DEFAULT_MEAN_TOLERANCE = 1e-2
DEFAULT_SOLVER_MAX_ITER = 10000
DEFAULT_EIGEN_TOLERANCE = 1e-2
DEFAULT_KRYLOV_DIM = 48
DEFAULT_KRYLOV_RESTARTS = 20
DEFAULT_PROBE_COUNT = 20
VERDICT_BAND_FACTOR = 10.0
NEUTRAL_RESIDUAL_FRACTION = 0.1
# right-hand sides below this fraction of |h| are round-off and give v = 0, omega = 0
MEAN_CHECK_FLOOR = 1e-8


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits shared by the solves of one analysis."""

    tol: float = DEFAULT_SOLVER_TOLERANCE
    mean_tol: float = DEFAULT_MEAN_TOLERANCE
    max_iter: int = DEFAULT_SOLVER_MAX_ITER
    eigen_tol: float = DEFAULT_EIGEN_TOLERANCE
    krylov_dim: int = DEFAULT_KRYLOV_DIM
    krylov_restarts: int = DEFAULT_KRYLOV_RESTARTS
    probe_count: int = DEFAULT_PROBE_COUNT
    band_degree: int = 1
    seed: int = 0


DEFAULT_SETTINGS = SolverSettings()


# constraint potential and Jacobi operator

def _vhat_frame(ops: WeightedOperators, h: np.ndarray, settings: SolverSettings) -> np.ndarray:
    rhs = ops.div_f(ops.div_f(h))
    mean = ops.mean(rhs)
    scale = float(np.sum(ops.measure * np.abs(rhs)) / np.sum(ops.measure))
    h_rms = ops.norm(h) / np.sqrt(np.sum(ops.norm_weights))
    if scale <= MEAN_CHECK_FLOOR * h_rms:
        return np.zeros_like(rhs)
    if abs(mean) > settings.mean_tol * scale + MEAN_CHECK_FLOOR * h_rms:
        raise NumericalCheckError(f"div_f div_f h has weighted mean {mean:.3e} "
                                  f"(relative {abs(mean) / scale:.2e}): adjointness defect too large")

    def deflate(v):
        return v - ops.mean(v)

    def operator(v):
        return ops.delta_f(v) + 0.5 * v

    result = gmres_solve(operator, rhs - mean, ops.measure, tol=settings.tol,
                         max_iter=settings.max_iter, project=deflate, label="vhat")
    return deflate(result.solution)


def solve_vhat(soliton: SolitonStructure, h: TensorField,
               settings: SolverSettings = DEFAULT_SETTINGS) -> TensorField:
    """
    Mean-zero solution v of Delta_f v + v/2 = div_f div_f h.

    Raises:
        NumericalCheckError: the right-hand side is not weighted mean zero.
        ConvergenceError: the iteration did not converge.
    """
    soliton.require_valid()
    ops = soliton.operators
    return TensorField.scalar(soliton.grid, _vhat_frame(ops, ops.frame_of(h), settings))


def _ricci_coefficient(ops: WeightedOperators, h: np.ndarray) -> float:
    scalar_mass = float(np.sum(ops.norm_weights * ops.scalar))
    if scalar_mass == 0.0:
        return 0.0
    return ops.inner(ops.ricci, h) / scalar_mass


def _jacobi_frame(ops: WeightedOperators, h: np.ndarray, settings: SolverSettings) -> np.ndarray:
    vhat = _vhat_frame(ops, h, settings)
    return (ops.lichnerowicz(h)
            + ops.div_f_dagger(ops.div_f(h))
            + 0.5 * ops.hessian(vhat)
            - _ricci_coefficient(ops, h) * ops.ricci)


def jacobi(soliton: SolitonStructure, h: TensorField, settings: SolverSettings = DEFAULT_SETTINGS) -> TensorField:
    """N_f h = L_f h + div_f^dagger div_f h + (1/2) Hess v_h - Rc (Rc, h)_f / int R e^{-f}"""
    soliton.require_valid()
    ops = soliton.operators
    return ops.field_of(_jacobi_frame(ops, ops.frame_of(h), settings))


def second_variation(soliton: SolitonStructure, h: TensorField,
                     settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """(4 pi)^{-n/2} (N_f h, h)_f"""
    soliton.require_valid()
    ops = soliton.operators
    fh = ops.frame_of(h)
    return gaussian_normalization(soliton.dimension) * ops.inner(_jacobi_frame(ops, fh, settings), fh)


def w_functional(grid: ChartedGrid, metric: TensorField, f: TensorField, tau: float = 1.0,
                 normalization_tolerance: float = 1e-6) -> float:
    """
    W(g, f, tau) = int [tau (R + |grad f|^2) + f - n] (4 pi tau)^{-n/2} e^{-f} dV.

    Raises:
        NotASolitonError: (4 pi tau)^{-n/2} int e^{-f} dV differs from 1 beyond tolerance.
    """
    if not tau > 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    n = grid.dimension
    prefactor = (4.0 * np.pi * tau) ** (-n / 2.0)
    density = prefactor * np.exp(-f.components)
    defect = abs(float(np.sum(grid.weights * density)) - 1.0)
    if not defect <= normalization_tolerance:
        raise NotASolitonError(f"W needs a normalized potential (defect {defect:.3e})")
    try:
        scalar = curvature(grid, metric, "closed-form").scalar.components
    except ConfigurationError:
        scalar = curvature(grid, metric, "finite-difference").scalar.components
    df = gradient(f)
    grad_sq = pointwise_inner(df, df, np.linalg.inv(metric.components))
    integrand = tau * (scalar + grad_sq) + f.components - n
    return float(np.sum(grid.weights * integrand * density))


# decomposition

@dataclass
class DecompositionResult:
    """h = h1 + rho Rc + h0 with h1 in Im(div_f^dagger) and h0 in Ker(div_f)_0."""

    h1: TensorField
    rho: float
    h0: TensorField
    omega: TensorField
    iterations: int
    diagnostics: Dict[str, float] = field(default_factory=dict)


@dataclass
class _FrameSplit:
    h1: np.ndarray
    rho: float
    h0: np.ndarray
    omega: np.ndarray
    iterations: int


def _split_frame(ops: WeightedOperators, h: np.ndarray, settings: SolverSettings) -> _FrameSplit:
    rhs = ops.div_f(h)
    if ops.norm(rhs) <= MEAN_CHECK_FLOOR * ops.norm(h):
        omega, iterations = np.zeros_like(rhs), 0
    else:
        result = gmres_solve(ops.div_div_dagger, rhs, ops.measure, tol=settings.tol,
                             max_iter=settings.max_iter, label="decompose")
        omega, iterations = result.solution, result.iterations
    h1 = ops.div_f_dagger(omega)
    rc_energy = ops.inner(ops.ricci, ops.ricci)
    rho = ops.inner(h, ops.ricci) / rc_energy if rc_energy > 0 else 0.0
    h0 = h - h1 - rho * ops.ricci
    return _FrameSplit(h1=h1, rho=rho, h0=h0, omega=omega, iterations=iterations)


def _decomposition_diagnostics(ops: WeightedOperators, h: np.ndarray, split: _FrameSplit) -> Dict[str, float]:
    h0_norm = ops.norm(split.h0)
    rc = ops.ricci
    rc_part = split.rho * rc
    return {
        "h0_divergence": ops.norm(ops.div_f(split.h0)) / (h0_norm + RELATIVE_EPSILON),
        "h0_ricci_overlap": abs(ops.inner(split.h0, rc)) / (h0_norm * ops.norm(rc) + RELATIVE_EPSILON),
        "reconstruction_defect": ops.norm(h - split.h1 - rc_part - split.h0),
        "h1_ricci_cross": abs(ops.inner(split.h1, rc_part)),
        "h1_h0_cross": abs(ops.inner(split.h1, split.h0)),
        "ricci_h0_cross": abs(ops.inner(rc_part, split.h0)),
        "norm": ops.norm(h),
    }


def decompose(soliton: SolitonStructure, h: TensorField,
              settings: SolverSettings = DEFAULT_SETTINGS) -> DecompositionResult:
    """
    Split h along Im(div_f^dagger) + R.Rc + Ker(div_f)_0.

    h1 = div_f^dagger w where div_f div_f^dagger w = div_f h, so h - h1 is
    weighted divergence free; rho is the weighted Rc coefficient and h0 the
    remainder. Diagnostics report how well
    h0 satisfies the kernel conditions and the mutual orthogonality.
    """
    soliton.require_valid()
    ops = soliton.operators
    fh = ops.frame_of(h)
    split = _split_frame(ops, fh, settings)
    diagnostics = _decomposition_diagnostics(ops, fh, split)
    logger.debug(f"Decomposition: rho={split.rho:.6f}, {split.iterations} GMRES iterations, {diagnostics}")
    return DecompositionResult(h1=ops.field_of(split.h1), rho=split.rho, h0=ops.field_of(split.h0),
                               omega=ops.field_of(split.omega), iterations=split.iterations,
                               diagnostics=diagnostics)


# spectra

@dataclass
class SpectralReport:
    subspace: str
    eigenvalues: List[float]
    eigentensors: List[TensorField]
    residuals: List[float]
    converged: List[bool]
    asymmetry: float
    projector_residual: float
    iterations: int
    restarts: int
    trivial: bool = False
    rayleigh_defects: List[float] = field(default_factory=list)

    @property
    def top(self) -> Optional[float]:
        return self.eigenvalues[0] if self.eigenvalues else None


class _PackedSpace:
    """Packed frame components of symmetric 2-tensors with the weighted inner product."""

    def __init__(self, ops: WeightedOperators):
        self.ops = ops
        self.n = ops.n
        self.weights = ops.norm_weights[:, None]

    def pack(self, h: np.ndarray) -> np.ndarray:
        return pack_symmetric(h)

    def unpack(self, v: np.ndarray) -> np.ndarray:
        return unpack_symmetric(v, self.n)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.weights * a * b))

    def wrap(self, op: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
        return lambda v: self.pack(op(self.unpack(v)))


def _probe_tensors(soliton: SolitonStructure, count: int, degree: int, seed: int) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    ops = soliton.operators
    return [ops.frame_of(random_sym_tensor(soliton.grid, rng, degree)) for _ in range(count)]


def _subspace_projector(ops: WeightedOperators, subspace: str,
                        settings: SolverSettings) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    if subspace == "im-div-dagger":
        return lambda h: _split_frame(ops, h, settings).h1
    if subspace == "ker-div0":
        return lambda h: _split_frame(ops, h, settings).h0
    if subspace == "full":
        return None
    raise ConfigurationError(f"unknown subspace '{subspace}'")


def _projector_residual(ops: WeightedOperators, project, probe: np.ndarray) -> float:
    once = project(probe)
    return ops.norm(project(once) - once) / (ops.norm(once) + RELATIVE_EPSILON)


def ker_div0_probe(soliton: SolitonStructure, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Largest ||P h|| / ||h|| over random fields, P the projector onto Ker(div_f)_0."""
    ops = soliton.operators
    ratios = []
    for probe in _probe_tensors(soliton, settings.probe_count, settings.band_degree, settings.seed + 1):
        ratios.append(ops.norm(_split_frame(ops, probe, settings).h0) / (ops.norm(probe) + RELATIVE_EPSILON))
    return float(max(ratios))


def verdict_band(soliton: SolitonStructure, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Ten times the largest identity residual on degree-1 fields."""
    rng = np.random.default_rng(settings.seed)
    grid = soliton.grid
    residuals = identity_residuals(soliton, random_scalar(grid, rng, 1), random_one_form(grid, rng, 1),
                                   random_sym_tensor(grid, rng, 1))
    return VERDICT_BAND_FACTOR * max(residuals.values())


def spectrum(soliton: SolitonStructure, subspace: str, count: int,
             settings: SolverSettings = DEFAULT_SETTINGS, band: Optional[float] = None) -> SpectralReport:
    """
    Top eigenvalues of L_f restricted to a subspace of symmetric 2-tensors.

    Every Krylov iterate is re-projected onto the subspace. For Ker(div_f)_0 a
    subspace that projects random fields below `band` is reported trivial with
    no eigenvalues.
    """
    if count < 1:
        raise ConfigurationError("spectrum needs count >= 1")
    soliton.require_valid()
    soliton.require_compact("spectrum")
    ops = soliton.operators
    project = _subspace_projector(ops, subspace, settings)
    probes = _probe_tensors(soliton, 1, settings.band_degree, settings.seed + 2)
    projector_residual = _projector_residual(ops, project, probes[0]) if project else 0.0

    if subspace == "ker-div0":
        probe_norm = ker_div0_probe(soliton, settings)
        if band is None:
            band = verdict_band(soliton, settings)
        if probe_norm <= band:
            logger.info(f"Ker(div_f)_0 is numerically trivial: probe norm {probe_norm:.2e} <= band {band:.2e}")
            return SpectralReport(subspace=subspace, eigenvalues=[], eigentensors=[], residuals=[], converged=[],
                                  asymmetry=0.0, projector_residual=probe_norm, iterations=0, restarts=0,
                                  trivial=True)

    space = _PackedSpace(ops)
    block_size = max(count + 1, 3)
    start = [space.pack(h) for h in _probe_tensors(soliton, block_size, 3, settings.seed + 3)]
    result: EigenResult = block_krylov_eigen(
        space.wrap(ops.lichnerowicz), start, space.inner, count,
        max_dim=settings.krylov_dim, max_restarts=settings.krylov_restarts, tol=settings.eigen_tol,
        project=space.wrap(project) if project else None, label=f"spectrum[{subspace}]")

    tensors = [space.unpack(v) for v in result.vectors]
    rayleigh = []
    for value, t in zip(result.values, tensors):
        quotient = ops.inner(ops.lichnerowicz(t), t) / ops.inner(t, t)
        rayleigh.append(abs(quotient - value))
    return SpectralReport(
        subspace=subspace,
        eigenvalues=[float(v) for v in result.values],
        eigentensors=[ops.field_of(t) for t in tensors],
        residuals=[float(r) for r in result.residuals],
        converged=[bool(c) for c in result.converged],
        asymmetry=result.asymmetry,
        projector_residual=projector_residual,
        iterations=result.applications,
        restarts=result.restarts,
        rayleigh_defects=rayleigh,
    )


def drift_laplacian_spectrum(soliton: SolitonStructure, count: int,
                             settings: SolverSettings = DEFAULT_SETTINGS) -> SpectralReport:
    """Top eigenvalues of Delta_f on weighted mean-zero functions (all negative)."""
    soliton.require_valid()
    soliton.require_compact("drift Laplacian spectrum")
    ops = soliton.operators
    rng = np.random.default_rng(settings.seed + 4)

    def inner(a, b):
        return float(np.sum(ops.norm_weights * a * b))

    def mean_zero(u):
        return u - ops.mean(u)

    block_size = max(count + 1, 3)
    start = [random_scalar(soliton.grid, rng, 3).components for _ in range(block_size)]
    result = block_krylov_eigen(ops.delta_f, start, inner, count, max_dim=settings.krylov_dim,
                                max_restarts=settings.krylov_restarts, tol=settings.eigen_tol,
                                project=mean_zero, label="spectrum[scalar]")
    return SpectralReport(
        subspace=SCALAR_SUBSPACE,
        eigenvalues=[float(v) for v in result.values],
        eigentensors=[TensorField.scalar(soliton.grid, v) for v in result.vectors],
        residuals=[float(r) for r in result.residuals],
        converged=[bool(c) for c in result.converged],
        asymmetry=result.asymmetry,
        projector_residual=0.0,
        iterations=result.applications,
        restarts=result.restarts,
    )


# verdict

@dataclass
class Verdict:
    status: str
    top_eigenvalue: Optional[float]
    band: float
    witness: Optional[TensorField]
    witness_second_variation: Optional[float]
    note: str
    report: SpectralReport


def stability_verdict(soliton: SolitonStructure, band: Optional[float] = None, count: int = 3,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> Verdict:
    """
    Linear stability from the top eigenvalue of L_f on Ker(div_f)_0.

    stable: subspace trivial or top <= -band. unstable: top >= band and the
    eigen-tensor has positive second variation. Anything else is inconclusive;
    an eigenvalue inside the band with a residual below band/10 carries the
    note "stable-neutral".
    """
    soliton.require_compact("stability verdict")
    if band is None:
        band = verdict_band(soliton, settings)
    report = spectrum(soliton, "ker-div0", count, settings, band=band)
    if report.trivial:
        return Verdict("stable", None, band, None, None, "trivial subspace", report)

    top = report.eigenvalues[0]
    if top <= -band:
        return Verdict("stable", top, band, None, None, "", report)
    if top >= band:
        witness = report.eigentensors[0]
        value = second_variation(soliton, witness, settings)
        if value > 0:
            return Verdict("unstable", top, band, witness, value, "", report)
        return Verdict("inconclusive", top, band, witness, value,
                       "positive eigenvalue without positive second variation", report)
    note = "stable-neutral" if report.residuals[0] < NEUTRAL_RESIDUAL_FRACTION * band else ""
    return Verdict("inconclusive", top, band, None, None, note, report)


# supplementary checks

def invariance_checks(soliton: SolitonStructure, w: TensorField, h: TensorField,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> Dict[str, float]:
    """
    Invariance of the three pieces under L_f and block-diagonality of the
    second variation for one 1-form w and one 2-tensor h.
    """
    soliton.require_valid()
    soliton.require_compact("invariance checks")
    ops = soliton.operators
    fw, fh = ops.frame_of(w), ops.frame_of(h)
    rc = ops.ricci

    image = ops.lichnerowicz(ops.div_f_dagger(fw))
    image_kernel_part = _split_frame(ops, image, settings).h0

    split = _split_frame(ops, fh, settings)
    lich_h0 = ops.lichnerowicz(split.h0)
    pieces = {"image": split.h1, "ricci": split.rho * rc, "kernel": split.h0}
    jac = {name: _jacobi_frame(ops, piece, settings) for name, piece in pieces.items()}
    jac_h = _jacobi_frame(ops, fh, settings)
    scale = ops.norm(jac_h) * ops.norm(fh) + RELATIVE_EPSILON

    checks = {
        "image_invariance": ops.norm(image_kernel_part) / (ops.norm(image) + RELATIVE_EPSILON),
        "kernel_divergence_invariance": ops.norm(ops.div_f(lich_h0)) / (ops.norm(lich_h0) + RELATIVE_EPSILON),
        "kernel_ricci_invariance": abs(ops.inner(lich_h0, rc)) / (ops.norm(lich_h0) * ops.norm(rc)
                                                                   + RELATIVE_EPSILON),
    }
    names = list(pieces)
    for a in names:
        for b in names:
            if a != b:
                checks[f"cross_{a}_{b}"] = abs(ops.inner(jac[a], pieces[b])) / scale
    checks["jacobi_on_kernel"] = ops.norm(jac_h - lich_h0) / (ops.norm(lich_h0) + ops.norm(jac_h) + RELATIVE_EPSILON)
    # the (4 pi)^{-n/2} prefactor is common to both sides
    checks["second_variation_consistency"] = abs(ops.inner(jac_h, fh) - ops.inner(lich_h0, split.h0)) / scale
    return checks


def eigen_relation_checks(soliton: SolitonStructure, u: TensorField) -> Dict[str, float]:
    """
    Eigen-relations of the family xi = L_{w#} g with w = du for a first
    harmonic u: the eigen-pair itself, Delta_f div_f w = (2 lambda - 1) div_f w
    and the propagation of the eigenvalue to div_f^dagger div_f xi and to
    Hess(div_f w).
    """
    soliton.require_valid()
    ops = soliton.operators
    w = ops.gradient(ops.frame_of(u))
    xi = ops.lie_metric(w)
    value = ops.inner(ops.lichnerowicz(xi), xi) / ops.inner(xi, xi)
    div = ops.div_f(w)
    propagated = {
        "eigen_pair": xi,
        "propagation_double_divergence": ops.div_f_dagger(ops.div_f(xi)),
        "propagation_hessian": ops.hessian(div),
    }
    checks = {"rayleigh_quotient": value}
    for name, t in propagated.items():
        checks[name] = ops.norm(ops.lichnerowicz(t) - value * t) / (ops.norm(t) + RELATIVE_EPSILON)
    checks["divergence_eigen_relation"] = (ops.norm(ops.delta_f(div) - (2.0 * value - 1.0) * div)
                                           / (ops.norm(div) + RELATIVE_EPSILON))
    return checks


def convergence_study(descriptor: ManifoldDescriptor, resolutions: Sequence[int], seed: int = 0,
                      degree: int = 3, build: Optional[Callable[[ManifoldDescriptor, int], SolitonStructure]] = None
                      ) -> Dict[str, object]:
    """
    Identity residuals on the same continuum fields at several resolutions and
    the observed orders log(r1 / r2) / log(N2 / N1) between consecutive ones.
    """
    if build is None:
        from zoo import build_soliton as build
    if len(resolutions) < 2:
        raise ConfigurationError("a convergence study needs at least two resolutions")
    rows = []
    for n in sorted(resolutions):
        soliton = build(descriptor, n)
        rng = np.random.default_rng(seed)
        grid = soliton.grid
        residuals = identity_residuals(soliton, random_scalar(grid, rng, degree),
                                       random_one_form(grid, rng, degree), random_sym_tensor(grid, rng, degree))
        rows.append({"resolution": n, "spacing": float(grid.factors[0].spacing[0]), "residuals": residuals})
        logger.info(f"Convergence study N={n}: max residual {max(residuals.values()):.3e}")

    orders: Dict[str, List[float]] = {}
    for first, second in zip(rows, rows[1:]):
        ratio = np.log(second["resolution"] / first["resolution"])
        for name, r1 in first["residuals"].items():
            r2 = second["residuals"][name]
            order = float(np.log(r1 / r2) / ratio) if r1 > 0 and r2 > 0 else float("nan")
            orders.setdefault(name, []).append(order)
    return {"rows": rows, "orders": orders}
