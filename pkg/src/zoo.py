"""
Built-in soliton geometries and their text descriptors.

    sphere(0.5)                            round 2-sphere, Gauss curvature K
    product(sphere(0.5), sphere(0.5))      product of two round 2-spheres
    flat-box(n=2, side=8)                  Gaussian shrinker on a flat box (identity fixture)
"""
import sys
from pathlib import Path

import numpy as np
import regex
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError, NotASolitonError
from grid_geometry import ManifoldDescriptor, TensorField, build_grid, zoo_metric
from soliton_calculus import DEFAULT_SOLITON_TOLERANCE, SolitonStructure, make_soliton

_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
SPHERE_PATTERN = regex.compile(rf"sphere\(\s*(?:K\s*=\s*)?(?P<k>{_NUMBER})\s*\)", regex.IGNORECASE)
PRODUCT_PATTERN = regex.compile(
    rf"product\(\s*(?P<first>sphere\([^()]*\))\s*,\s*(?P<second>sphere\([^()]*\))\s*\)", regex.IGNORECASE)
BOX_PATTERN = regex.compile(
    rf"(?:flat-box|gaussian)\(\s*(?:n\s*=\s*)?(?P<n>\d+)\s*,\s*(?:side\s*=\s*)?(?P<side>{_NUMBER})\s*\)",
    regex.IGNORECASE)


def parse_descriptor(text: str) -> ManifoldDescriptor:
    """
    Parse a manifold descriptor string.

    Raises:
        ConfigurationError: the text matches none of the zoo forms.
    """
    compact = text.strip()
    match = PRODUCT_PATTERN.fullmatch(compact)
    if match:
        first = parse_descriptor(match.group("first"))
        second = parse_descriptor(match.group("second"))
        return ManifoldDescriptor(name="product", curvatures=first.curvatures + second.curvatures, dimension=4)
    match = SPHERE_PATTERN.fullmatch(compact)
    if match:
        return ManifoldDescriptor(name="sphere", curvatures=(float(match.group("k")),), dimension=2)
    match = BOX_PATTERN.fullmatch(compact)
    if match:
        return ManifoldDescriptor(name="flat-box", curvatures=(), dimension=int(match.group("n")),
                                  side=float(match.group("side")))
    raise ConfigurationError(f"unsupported manifold descriptor '{text}'")


def _einstein_soliton(descriptor: ManifoldDescriptor, resolution: int, tolerance: float) -> SolitonStructure:
    grid = build_grid(descriptor, resolution)
    try:
        return make_soliton(grid, zoo_metric(grid), TensorField.zeros(grid, 0), 1.0, tolerance=tolerance)
    except NotASolitonError as e:
        raise NotASolitonError(f"{descriptor.label()} is not a shrinker at tau=1 "
                               f"(needs Rc = g/2, i.e. K = 1/2 per sphere factor): {e}") from e


def make_round_sphere(curvature: float, resolution: int,
                      tolerance: float = DEFAULT_SOLITON_TOLERANCE) -> SolitonStructure:
    return _einstein_soliton(ManifoldDescriptor("sphere", (curvature,), 2), resolution, tolerance)


def make_product(first: float, second: float, resolution: int,
                 tolerance: float = DEFAULT_SOLITON_TOLERANCE) -> SolitonStructure:
    return _einstein_soliton(ManifoldDescriptor("product", (first, second), 4), resolution, tolerance)


def make_gaussian_fixture(dimension: int, side: float, resolution: int,
                          tolerance: float = DEFAULT_SOLITON_TOLERANCE) -> SolitonStructure:
    """Flat box with f = |x|^2 / 4; residuals are taken on the interior mask."""
    grid = build_grid(ManifoldDescriptor("flat-box", (), dimension, side), resolution)
    f = TensorField.scalar(grid, np.sum(grid.coords ** 2, axis=1) / 4.0)
    return make_soliton(grid, zoo_metric(grid), f, 1.0, tolerance=tolerance)


def build_soliton(descriptor: ManifoldDescriptor, resolution: int,
                  tolerance: float = DEFAULT_SOLITON_TOLERANCE) -> SolitonStructure:
    logger.info(f"Building {descriptor.label()} at N={resolution}")
    if descriptor.name == "sphere":
        return make_round_sphere(descriptor.curvatures[0], resolution, tolerance)
    if descriptor.name == "product":
        return make_product(descriptor.curvatures[0], descriptor.curvatures[1], resolution, tolerance)
    if descriptor.name == "flat-box":
        return make_gaussian_fixture(descriptor.dimension, descriptor.side, resolution, tolerance)
    raise ConfigurationError(f"unsupported manifold descriptor '{descriptor.name}'")
