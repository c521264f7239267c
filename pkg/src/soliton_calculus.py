"""
Gradient shrinking solitons and their weighted operators.

A SolitonStructure carries (g, f) with Rc + Hess f = g/2 after the metric has
been rescaled to tau = 1 and f shifted so that (4 pi)^{-n/2} int e^{-f} dV = 1.
Its operators act on orthonormal-frame components, where the metric is the
identity and pointwise contractions are plain sums.
"""
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from curvature_calculus import (CurvatureBundle, FrameCalculus, curvature, frame_calculus,
                                symmetrize)
from errors import ConfigurationError, NotASolitonError, NumericalCheckError
from grid_geometry import ChartedGrid, TensorField

DEFAULT_SOLITON_TOLERANCE = 1e-6
DEFAULT_NORMALIZATION_TOLERANCE = 1e-10
RELATIVE_EPSILON = 1e-30

IDENTITY_NAMES = (
    "gradient_commutes_with_drift_laplacian",
    "divergence_commutes_with_drift_laplacian",
    "adjoint_divergence_intertwines_lichnerowicz",
    "lie_derivative_intertwines_lichnerowicz",
    "divergence_intertwines_lichnerowicz",
    "divergence_of_lie_derivative",
    "double_divergence_commutes_with_lichnerowicz",
)


def gaussian_normalization(dimension: int) -> float:
    """(4 pi)^{-n/2}"""
    return (4.0 * np.pi) ** (-dimension / 2.0)


class WeightedOperators:
    """
    The weighted operators of a soliton on frame components.

    div_f, div_f^dagger, Delta_f and L_f follow their analytic formulas.
    Delta_f is built on the compact rough Laplacian, so its discrete kernel is
    the constants alone and not the checkerboard modes of nabla applied twice.
    """

    def __init__(self, soliton: "SolitonStructure"):
        grid = soliton.grid
        self.grid = grid
        self.calc: FrameCalculus = frame_calculus(grid)
        self.bundle: CurvatureBundle = soliton.curvature
        self.n = grid.dimension
        f = soliton.potential.components
        self.df = self.calc.nabla(f)
        self.measure = grid.weights * np.exp(-f)
        self.norm_weights = self.measure * grid.mask if soliton.fixture else self.measure
        self.ricci = self.bundle.ricci_frame
        self.scalar = self.bundle.scalar.components

    # first order

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.calc.nabla(u)

    def hessian(self, u: np.ndarray) -> np.ndarray:
        return symmetrize(self.calc.nabla(self.calc.nabla(u)))

    def _contract_drift(self, array: np.ndarray) -> np.ndarray:
        return np.einsum('pa,pa...->p...', self.df, array)

    def div_f(self, t: np.ndarray) -> np.ndarray:
        if t.ndim == 1:
            raise ConfigurationError("div_f is not defined on functions")
        return self.calc.divergence(t) - self._contract_drift(t)

    def div_f_dagger(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            return -self.calc.nabla(x)
        if x.ndim == 2:
            return -symmetrize(self.calc.nabla(x))
        raise ConfigurationError("div_f^dagger is not defined on 2-tensors")

    def lie_metric(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * symmetrize(self.calc.nabla(w))

    # second order

    def delta_f(self, t: np.ndarray) -> np.ndarray:
        return self.calc.laplacian(t) - self._contract_drift(self.calc.nabla(t))

    def curvature_action(self, h: np.ndarray) -> np.ndarray:
        return self.bundle.action_frame(h)

    def lichnerowicz(self, h: np.ndarray) -> np.ndarray:
        return 0.5 * self.delta_f(h) + self.curvature_action(h)

    def div_div_dagger(self, w: np.ndarray) -> np.ndarray:
        """div_f div_f^dagger on 1-forms, -(Delta_f w + grad div_f w + w/2) / 2 on a shrinker."""
        return -0.5 * (self.delta_f(w) + self.calc.nabla(self.div_f(w)) + 0.5 * w)

    # quadrature

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        products = (a * b).reshape(self.grid.npts, -1).sum(axis=1)
        return float(np.sum(self.norm_weights * products))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def mean(self, u: np.ndarray) -> float:
        return float(np.sum(self.measure * u) / np.sum(self.measure))

    def relative(self, left: np.ndarray, right: np.ndarray) -> float:
        return self.norm(left - right) / (self.norm(left) + self.norm(right) + RELATIVE_EPSILON)

    # frame <-> chart

    def frame_of(self, field: TensorField) -> np.ndarray:
        self.grid.check_same(field.grid)
        return self.calc.to_frame(field.components)

    def field_of(self, comps: np.ndarray) -> TensorField:
        return TensorField(self.grid, comps.ndim - 1, self.calc.to_chart(comps))


@dataclass(frozen=True, eq=False)
class SolitonStructure:
    """
    A normalized gradient shrinking soliton on a charted grid (tau = 1).

    fixture marks the flat-box Gaussian, whose residuals and norms are taken
    over the interior mask only.
    """

    grid: ChartedGrid
    metric: TensorField
    potential: TensorField
    curvature: CurvatureBundle
    residual: float
    normalization_defect: float
    normalization_shift: float
    fixture: bool
    tolerance: float = DEFAULT_SOLITON_TOLERANCE
    tau: float = 1.0

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def ricci(self) -> TensorField:
        return self.curvature.ricci

    @cached_property
    def operators(self) -> WeightedOperators:
        return WeightedOperators(self)

    def diagnostics(self) -> dict:
        f = self.potential.components
        return {
            "soliton_residual": self.residual,
            "soliton_tolerance": self.tolerance,
            "normalization_defect": self.normalization_defect,
            "normalization_shift": self.normalization_shift,
            "potential_min": float(np.min(f)),
            "potential_max": float(np.max(f)),
            "tau": self.tau,
            "fixture": self.fixture,
        }

    def require_valid(self) -> None:
        if not self.residual <= self.tolerance:
            raise NotASolitonError(f"soliton residual {self.residual:.3e} exceeds tolerance {self.tolerance:.1e}")

    def require_compact(self, analysis: str) -> None:
        if self.fixture:
            raise ConfigurationError(f"{analysis} needs a compact soliton; the flat-box fixture is identity-only")


def make_soliton(grid: ChartedGrid, metric: TensorField, f: TensorField, tau: float = 1.0,
                 tolerance: float = DEFAULT_SOLITON_TOLERANCE,
                 normalization_tolerance: float = DEFAULT_NORMALIZATION_TOLERANCE) -> SolitonStructure:
    """
    Rescale to tau = 1, normalize f and verify the soliton equation.

    Args:
        grid: Zoo grid.
        metric: The grid's zoo metric (scaled by tau when tau != 1).
        f: Potential.
        tau: Soliton scale, positive.
        tolerance: Largest accepted max-norm of Rc + Hess f - g/2.
        normalization_tolerance: Largest accepted normalization defect.

    Returns:
        SolitonStructure

    Raises:
        NotASolitonError: the pair does not satisfy the shrinker equation, or
            the normalization integral is not finite.
        ConfigurationError: tau not positive or metric not a zoo metric.
    """
    if not tau > 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    grid.check_same(metric.grid)
    grid.check_same(f.grid)
    if tau != 1.0:
        grid = grid.rescaled(1.0 / np.sqrt(tau))
        metric = TensorField.sym_tensor(grid, metric.components / tau)
        f = TensorField.scalar(grid, f.components)
        logger.info(f"Rescaled metric by 1/tau = {1.0 / tau:g}")

    bundle = curvature(grid, metric, "closed-form")
    n = grid.dimension
    total = float(np.sum(grid.weights * np.exp(-f.components)))
    if not np.isfinite(total) or total <= 0:
        raise NotASolitonError("normalization integral of e^{-f} is not finite")
    shift = float(np.log(total * gaussian_normalization(n)))
    potential = TensorField.scalar(grid, f.components + shift)
    defect = abs(gaussian_normalization(n) * float(np.sum(grid.weights * np.exp(-potential.components))) - 1.0)
    if not defect <= normalization_tolerance:
        raise NotASolitonError(f"normalization defect {defect:.3e} exceeds {normalization_tolerance:.1e}")

    fixture = grid.topology == "flat-box"
    calc = frame_calculus(grid)
    hess = symmetrize(calc.nabla(calc.nabla(potential.components)))
    pointwise = np.sqrt(np.sum((bundle.ricci_frame + hess - 0.5 * np.eye(n)) ** 2, axis=(1, 2)))
    residual = float(np.max(pointwise[grid.mask] if fixture else pointwise))

    soliton = SolitonStructure(grid=grid, metric=metric, potential=potential, curvature=bundle,
                               residual=residual, normalization_defect=defect, normalization_shift=shift,
                               fixture=fixture, tolerance=tolerance)
    soliton.require_valid()
    logger.info(f"Accepted soliton on {grid.descriptor.label()} N={grid.resolution}: "
                f"residual {residual:.3e}, normalization shift {shift:.6f}")
    return soliton


# chart-component wrappers

def _apply(soliton: SolitonStructure, op: Callable[[np.ndarray], np.ndarray], field: TensorField) -> TensorField:
    ops = soliton.operators
    return ops.field_of(op(ops.frame_of(field)))


def div_f(soliton: SolitonStructure, t: TensorField) -> TensorField:
    """div w - w(grad f) on 1-forms; div h - h(grad f, .) on symmetric 2-tensors."""
    if t.rank == 0:
        raise ConfigurationError("div_f is not defined on functions")
    return _apply(soliton, soliton.operators.div_f, t)


def div_f_dagger(soliton: SolitonStructure, x: TensorField) -> TensorField:
    """-grad u on functions; -(1/2) L_{w#} g on 1-forms."""
    if x.rank == 2:
        raise ConfigurationError("div_f^dagger is not defined on 2-tensors")
    return _apply(soliton, soliton.operators.div_f_dagger, x)


def delta_f(soliton: SolitonStructure, t: TensorField) -> TensorField:
    return _apply(soliton, soliton.operators.delta_f, t)


def lichnerowicz(soliton: SolitonStructure, h: TensorField) -> TensorField:
    """(1/2) Delta_f h + Rm(h, .)"""
    if h.rank != 2:
        raise ConfigurationError("the Lichnerowicz operator acts on symmetric 2-tensors")
    return _apply(soliton, soliton.operators.lichnerowicz, h)


def lie_metric(soliton: SolitonStructure, w: TensorField) -> TensorField:
    """Lie derivative of g along the dual vector field of w."""
    if w.rank != 1:
        raise ConfigurationError("lie_metric takes a 1-form")
    return _apply(soliton, soliton.operators.lie_metric, w)


def weighted_norm(soliton: SolitonStructure, t: TensorField) -> float:
    ops = soliton.operators
    return ops.norm(ops.frame_of(t))


def weighted_inner(soliton: SolitonStructure, a: TensorField, b: TensorField) -> float:
    if a.rank != b.rank:
        raise ConfigurationError(f"rank mismatch: {a.rank} vs {b.rank}")
    ops = soliton.operators
    return ops.inner(ops.frame_of(a), ops.frame_of(b))


def _identity_sides(ops: WeightedOperators, u: np.ndarray, w: np.ndarray, h: np.ndarray
                    ) -> Dict[str, Callable[[], Tuple[np.ndarray, np.ndarray]]]:
    def gradient_commutes():
        grad = ops.gradient(u)
        return ops.gradient(ops.delta_f(u)), ops.delta_f(grad) - 0.5 * grad

    def divergence_commutes():
        div = ops.div_f(w)
        return ops.div_f(ops.delta_f(w)), ops.delta_f(div) + 0.5 * div

    def adjoint_intertwines():
        dagger = ops.div_f_dagger(w)
        return ops.div_f_dagger(ops.delta_f(w)), 2.0 * ops.lichnerowicz(dagger) - 0.5 * dagger

    def lie_intertwines():
        lie = ops.lie_metric(w)
        return 2.0 * ops.lichnerowicz(lie), ops.lie_metric(ops.delta_f(w)) + 0.5 * lie

    def divergence_intertwines():
        div = ops.div_f(h)
        return 2.0 * ops.div_f(ops.lichnerowicz(h)), ops.delta_f(div) + 0.5 * div

    def divergence_of_lie():
        return ops.div_f(ops.lie_metric(w)), ops.delta_f(w) + ops.gradient(ops.div_f(w)) + 0.5 * w

    def double_divergence_commutes():
        return (ops.div_f_dagger(ops.div_f(ops.lichnerowicz(h))),
                ops.lichnerowicz(ops.div_f_dagger(ops.div_f(h))))

    return dict(zip(IDENTITY_NAMES, (gradient_commutes, divergence_commutes, adjoint_intertwines,
                                     lie_intertwines, divergence_intertwines, divergence_of_lie,
                                     double_divergence_commutes)))


def identity_residuals(soliton: SolitonStructure, u: TensorField, w: TensorField, h: TensorField,
                       workers: int = 1) -> Dict[str, float]:
    """
    Relative residuals ||LHS - RHS||_w / (||LHS||_w + ||RHS||_w + 1e-30) of the
    seven commutation identities of the weighted operators.

    Args:
        soliton: The soliton.
        u: Smooth function.
        w: Smooth 1-form.
        h: Smooth symmetric 2-tensor.
        workers: Threads evaluating identities concurrently.

    Returns:
        Map identity name -> relative residual, in a fixed order.
    """
    soliton.require_valid()
    if (u.rank, w.rank, h.rank) != (0, 1, 2):
        raise ConfigurationError("identity_residuals takes a function, a 1-form and a 2-tensor")
    ops = soliton.operators
    sides = _identity_sides(ops, ops.frame_of(u), ops.frame_of(w), ops.frame_of(h))

    def evaluate(name):
        left, right = sides[name]()
        return ops.relative(left, right)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = list(pool.map(evaluate, IDENTITY_NAMES))
    residuals = dict(zip(IDENTITY_NAMES, values))
    if not all(np.isfinite(v) for v in values):
        raise NumericalCheckError("identity residual is not finite")
    logger.debug(f"Identity residuals: {residuals}")
    return residuals


def adjointness_defect(soliton: SolitonStructure, w: TensorField, h: TensorField) -> float:
    """|(div_f^dagger w, h)_f - (w, div_f h)_f| / (||w||_w ||h||_w)"""
    ops = soliton.operators
    fw, fh = ops.frame_of(w), ops.frame_of(h)
    gap = ops.inner(ops.div_f_dagger(fw), fh) - ops.inner(fw, ops.div_f(fh))
    return abs(gap) / (ops.norm(fw) * ops.norm(fh) + RELATIVE_EPSILON)


def self_adjointness_defect(soliton: SolitonStructure, a: TensorField, b: TensorField) -> float:
    """Symmetry defect of Delta_f (functions) or L_f (2-tensors) on the pair (a, b)."""
    ops = soliton.operators
    if a.rank != b.rank or a.rank not in (0, 2):
        raise ConfigurationError("self-adjointness is checked for Delta_f on functions and L_f on 2-tensors")
    op = ops.delta_f if a.rank == 0 else ops.lichnerowicz
    fa, fb = ops.frame_of(a), ops.frame_of(b)
    op_a, op_b = op(fa), op(fb)
    gap = ops.inner(op_a, fb) - ops.inner(fa, op_b)
    return abs(gap) / (ops.norm(op_a) * ops.norm(fb) + ops.norm(fa) * ops.norm(op_b) + RELATIVE_EPSILON)


def ricci_relations(soliton: SolitonStructure) -> Dict[str, Optional[float]]:
    """
    Ricci tensor relations of a soliton: div_f Rc = 0, L_f Rc = Rc/2,
    N_f Rc = 0, Delta_f R = R - 2|Rc|^2 and the energy ratio
    int |Rc|^2 e^{-f} / int R e^{-f} = 1/2.
    """
    from variation_analysis import jacobi

    ops = soliton.operators
    rc = ops.ricci
    rc_norm = ops.norm(rc)
    scalar = ops.scalar
    scalar_mass = float(np.sum(ops.norm_weights * scalar))
    ricci_energy = ops.inner(rc, rc)
    equation = ops.delta_f(scalar) - scalar + 2.0 * np.sum(rc ** 2, axis=(1, 2))
    denominator = rc_norm + RELATIVE_EPSILON
    return {
        "divergence_of_ricci": ops.norm(ops.div_f(rc)) / denominator,
        "lichnerowicz_of_ricci": ops.norm(ops.lichnerowicz(rc) - 0.5 * rc) / denominator,
        "jacobi_of_ricci": weighted_norm(soliton, jacobi(soliton, soliton.ricci)) / denominator,
        "scalar_curvature_equation": ops.norm(equation) / (ops.norm(scalar) + RELATIVE_EPSILON),
        "ricci_energy_ratio": ricci_energy / scalar_mass if scalar_mass > 0 else None,
    }
