import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.geometry import (
    CutOff,
    GeometryError,
    LayerGeometry,
    PerforationSpec,
    build_macro_domain,
    cutoff_psi,
    dist_to_boundary,
    distance_weight,
    to_cell_coords,
)
from perfhom.verify import muckenhoupt_constant


def test_lattice_count(disk):
    dom = build_macro_domain("unit_square", 4, disk)
    assert dom.epsilon == 0.25
    assert len(dom.hole_centers) == 16


def test_unperforated_domain(nohole):
    dom = build_macro_domain("unit_square", 8, nohole)
    assert len(dom.hole_centers) == 0
    assert dom.measure == 1.0
    x = np.random.default_rng(0).random((50, 2))
    assert dom.in_material(x).all()


def test_near_touching_holes_gap():
    spec = PerforationSpec("disk", 0.49)
    dom = build_macro_domain("unit_square", 4, spec)
    assert spec.gap == pytest.approx(0.02)
    # sample all hole boundaries and measure the smallest pairwise distance
    t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    circ = dom.hole_radius * np.column_stack([np.cos(t), np.sin(t)])
    c = dom.hole_centers
    best = np.inf
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            if np.linalg.norm(c[i] - c[j]) > 1.5 * dom.epsilon:
                continue
            d = np.linalg.norm((c[i] + circ)[:, None] - (c[j] + circ)[None], axis=-1).min()
            best = min(best, d)
    assert best == pytest.approx(dom.epsilon * spec.gap, rel=1e-3)
    assert best >= dom.epsilon * spec.gap * (1 - 1e-3)


def test_holes_keep_away_from_boundary(disk):
    dom = build_macro_domain("unit_square", 8, disk)
    d = dist_to_boundary(dom.hole_centers) - dom.hole_radius
    assert d.min() >= dom.epsilon * disk.gap / 2 - 1e-15


@pytest.mark.parametrize("n", [1, 0, 2.5])
def test_rejects_bad_n(disk, n):
    with pytest.raises(GeometryError):
        build_macro_domain("unit_square", n, disk)


@pytest.mark.parametrize("r", [0.5, 0.7, 0.0, -0.1])
def test_rejects_bad_radius(r):
    with pytest.raises(GeometryError):
        PerforationSpec("disk", r)


def test_cell_coords_wrap_into_Y():
    x = np.random.default_rng(1).random((200, 2))
    y = to_cell_coords(x, 1 / 8)
    assert (y >= -0.5).all() and (y < 0.5).all()
    # hole centres map to the cell origin
    dom = build_macro_domain("unit_square", 8, PerforationSpec())
    assert np.abs(dom.cell_coords(dom.hole_centers)).max() < 1e-12


def test_cutoff_examples():
    eps = 1 / 16
    psi = CutOff(3 * eps, 4 * eps)
    x_plateau = np.array([[0.5, 4 * eps + 0.01]])
    x_inner = np.array([[0.5, 3 * eps]])
    x_mid = np.array([[0.5, 3.5 * eps]])
    assert psi(x_plateau)[0] == 1.0
    assert psi(x_inner)[0] == 0.0
    assert psi(x_mid)[0] == pytest.approx(0.5)
    assert np.linalg.norm(psi.gradient(x_mid)[0]) == pytest.approx(1 / eps)


def test_cutoff_rejects_inverted_bands(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, disk))
    with pytest.raises(GeometryError):
        cutoff_psi(layer, 0.5, 0.4)


@given(st.integers(2, 32))
def test_cutoffs_have_disjoint_transition(n):
    eps = 1 / n
    psi, psi2 = CutOff(3 * eps, 4 * eps), CutOff(7 * eps, 8 * eps)
    x = np.random.default_rng(n).random((500, 2))
    # psi2 > 0 forces psi = 1
    assert np.all((psi2(x) == 0) | (psi(x) == 1))


def test_distance_weight_examples(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, disk))
    x = np.array([[0.3, 0.0], [1.0, 0.5]])
    assert np.all(distance_weight(layer, 0.0)(x) == 1.0)
    assert distance_weight(layer, 0.7)(x) == pytest.approx((10 / 8) ** 0.7)
    with pytest.warns(UserWarning):
        assert not distance_weight(layer, -1.5).is_a2


def test_delta_bounded_below(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 16, disk))
    x = np.random.default_rng(2).random((1000, 2))
    assert layer.delta(x).min() >= layer.extended_offset


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_delta_is_1_lipschitz(c):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, PerforationSpec()))
    x, y = np.array(c[:2]), np.array(c[2:])
    assert abs(layer.delta(x) - layer.delta(y)) <= np.linalg.norm(x - y) + 1e-15


def test_layer_and_colayer_partition(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, disk))
    x = np.random.default_rng(3).random((1000, 2))
    a, b = layer.in_layer(x, 3), layer.in_colayer(x, 3)
    assert np.all(a ^ b)


def test_layer_measure_scales_linearly(disk):
    ratios = []
    for n in (8, 16, 32, 64):
        layer = LayerGeometry(build_macro_domain("unit_square", n, disk))
        ratios.append(layer.layer_measure(2) / (2 * layer.epsilon))
    # |O_{2 eps}| <= 4 * (2 eps) on the unit square, whatever eps
    assert max(ratios) <= 4.0


def test_weight_0_8_a2_below_0_99(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, disk))
    a08 = muckenhoupt_constant(distance_weight(layer, 0.8), 2.0, 6)
    a099 = muckenhoupt_constant(distance_weight(layer, 0.99), 2.0, 6)
    assert math.isfinite(a08)
    assert a08 < a099
