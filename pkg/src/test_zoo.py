import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError, NotASolitonError
from grid_geometry import ManifoldDescriptor
from zoo import build_soliton, make_product, parse_descriptor


@pytest.mark.parametrize("text,expected", [
    ("sphere(0.5)", ManifoldDescriptor("sphere", (0.5,), 2)),
    ("Sphere( K = 0.5 )", ManifoldDescriptor("sphere", (0.5,), 2)),
    ("sphere(5e-1)", ManifoldDescriptor("sphere", (0.5,), 2)),
    ("product(sphere(0.5), sphere(0.25))", ManifoldDescriptor("product", (0.5, 0.25), 4)),
    ("flat-box(n=2, side=8)", ManifoldDescriptor("flat-box", (), 2, 8.0)),
    ("gaussian(3, 6.5)", ManifoldDescriptor("flat-box", (), 3, 6.5)),
])
def test_parse_descriptor(text, expected):
    assert parse_descriptor(text) == expected


@pytest.mark.parametrize("text", ["torus(1)", "sphere()", "product(sphere(0.5))", "sphere(0.5) x sphere(0.5)", ""])
def test_parse_descriptor_rejects_unknown_forms(text):
    with pytest.raises(ConfigurationError):
        parse_descriptor(text)


def test_build_soliton_dispatch():
    sphere = build_soliton(parse_descriptor("sphere(0.5)"), 16)
    assert sphere.grid.descriptor.name == "sphere"
    assert not sphere.fixture
    fixture = build_soliton(parse_descriptor("flat-box(n=2, side=8)"), 32)
    assert fixture.fixture
    assert fixture.dimension == 2


def test_build_soliton_rejects_non_shrinkers():
    with pytest.raises(NotASolitonError):
        build_soliton(parse_descriptor("sphere(1)"), 16)
    with pytest.raises(NotASolitonError):
        build_soliton(parse_descriptor("product(sphere(0.5), sphere(0.25))"), 8)


@pytest.mark.slow
def test_product_potential():
    product = make_product(0.5, 0.5, 8)
    # (4 pi)^{-2} e^{-f} (8 pi)^2 = 1
    assert np.allclose(product.potential.components, np.log(4.0), atol=1e-3)
    assert product.residual <= product.tolerance
