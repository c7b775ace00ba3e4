import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.cell import build_corrector_set
from perfhom.fem import FieldOnMesh
from perfhom.geometry import LayerGeometry, build_macro_domain, distance_weight
from perfhom.mesh import mesh_macro
from perfhom.solve import data_preset
from perfhom.twoscale import (
    BallAverager,
    SmoothingKernel,
    error_report,
    extend_into_holes,
    lp_exponent,
    quenched_norm,
    smooth,
    smoothing_ratios,
)
from perfhom.twoscale import _F_probe, _grid_rule, _sq
from perfhom.verify import run_pipeline, trend_slope

KERNEL = SmoothingKernel()
EPS = (1 / 4, 1 / 8, 1 / 16, 1 / 32)


@pytest.fixture(scope="module")
def pipeline8(disk, lame, fine_corrector):
    dom = build_macro_domain("unit_square", 8, disk)
    return run_pipeline(dom, lame, fine_corrector, data_preset("boundary"), dom.epsilon / 8)


@pytest.fixture(scope="module")
def control_pipeline(nohole, lame):
    cs = build_corrector_set(nohole, lame, 1 / 32)
    dom = build_macro_domain("unit_square", 4, nohole)
    return run_pipeline(dom, lame, cs, data_preset("boundary"), dom.epsilon / 8)


@pytest.fixture(scope="module")
def ratios():
    return {eps: smoothing_ratios(eps, KERNEL) for eps in EPS}


def test_kernel_profile():
    assert KERNEL.mass() == pytest.approx(1.0, abs=1e-8)
    r = np.linspace(0, 1, 101)
    z = SmoothingKernel.profile(r)
    assert np.all(z >= 0)
    assert np.all(z[r >= 0.5] == 0)
    assert np.all(np.linalg.norm(KERNEL.points, axis=1) < 0.5)
    assert len(KERNEL.weights) >= 64


def test_scaled_kernel_has_unit_mass():
    x, w = _grid_rule(-0.05, 0.05, 0.1 / 40, 4)
    assert np.dot(w, KERNEL.scaled(x, 0.1)) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.sampled_from(EPS))
def test_constants_are_reproduced(c, eps):
    x = np.random.default_rng(0).random((20, 2))
    out = smooth(lambda z: np.full(len(z), c), eps, x, KERNEL)
    assert np.abs(out - c).max() <= 1e-13 * max(1.0, abs(c))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_smoothing_is_linear(a, b):
    x = np.random.default_rng(1).random((30, 2))
    f = lambda z: np.sin(3 * z[:, 0]) * z[:, 1]  # noqa: E731
    g = lambda z: np.cos(5 * z[:, 1])  # noqa: E731
    lhs = smooth(lambda z: a * f(z) + b * g(z), 1 / 8, x, KERNEL)
    rhs = a * smooth(f, 1 / 8, x, KERNEL) + b * smooth(g, 1 / 8, x, KERNEL)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_smoothing_of_a_mesh_field_extends_by_zero(disk):
    mesh = mesh_macro(build_macro_domain("unit_square", 4, disk), 1 / 32)
    f = FieldOnMesh(mesh, np.ones(mesh.n_nodes))
    corner = smooth(f, 1 / 4, np.array([[0.0, 0.0]]), KERNEL)
    assert 0.2 < corner[0] < 0.3


@pytest.mark.parametrize("p", [2, 4])
@pytest.mark.parametrize("eps", EPS)
def test_young_inequality(p, eps):
    inside = lambda x: np.all((x >= 0) & (x <= 1), axis=-1)  # noqa: E731
    f = lambda x: _F_probe(x) * inside(x)[:, None]  # noqa: E731
    xe, we = _grid_rule(-eps / 2, 1 + eps / 2, eps / 4)
    xi, wi = _grid_rule(0, 1, eps / 4)
    S = smooth(f, eps, xe, KERNEL)
    lhs = np.dot(we, _sq(S) ** (p / 2)) ** (1 / p)
    rhs = np.dot(wi, _sq(_F_probe(xi)) ** (p / 2)) ** (1 / p)
    assert lhs <= rhs


def test_smoothing_difference_bound(ratios):
    vals = [ratios[e]["difference"] for e in EPS]
    assert max(vals) <= 2 * math.pi
    assert trend_slope(EPS, vals) <= 0.1


def test_smoothing_oscillating_bound_is_stable(ratios):
    for key in ("oscillating", "weighted_plus", "weighted_minus", "weighted_difference"):
        eps = [e for e in EPS if not math.isnan(ratios[e][key])]
        vals = [ratios[e][key] for e in eps]
        assert len(vals) >= 3
        assert trend_slope(eps, vals) <= 0.1
    assert all(ratios[e]["constant"] <= 1e-12 for e in EPS)


def test_control_w_is_the_plain_difference(control_pipeline):
    tsc = control_pipeline.tsc
    u0 = tsc.u0.evaluate(tsc.w.mesh.nodes)
    assert np.abs(tsc.w.values - (tsc.u_eps.values - u0)).max() <= 1e-13


def test_control_errors_vanish(control_pipeline):
    rep = control_pipeline.report
    for name in ("h1_w", "l2_err", "lp_err_tau", "sqfn", "l4_err"):
        assert getattr(rep, name) <= 1e-12


def test_w_equals_difference_in_boundary_band(pipeline8):
    # psi vanishes on O_{3 eps}; the kernel radius eps/2 moves the support of S(psi grad u0) to O_{2.5 eps}
    tsc = pipeline8.tsc
    x = tsc.w.mesh.nodes
    layer = LayerGeometry(pipeline8.domain)
    band = layer.in_layer(x, 2.5)
    assert band.any()
    u0 = tsc.u0.evaluate(x[band])
    assert np.array_equal(tsc.w.values[band], tsc.u_eps.values[band] - u0)
    assert not tsc.S_nodes[band].any()
    rim = layer.in_layer(x, 3.0) & ~band
    assert np.abs(tsc.S_nodes[rim]).max() > 0


def test_corrector_reduces_h1_error(pipeline8):
    rep = pipeline8.report
    assert rep.h1_w < rep.h1_diff


def test_square_function_bound(pipeline8):
    rep = pipeline8.report
    assert rep.sqfn <= rep.sqfn_bound
    assert rep.h1_w_layer**2 + rep.h1_w_colayer**2 == pytest.approx(rep.h1_w**2)


def test_report_values_are_finite(pipeline8):
    rep = pipeline8.report
    vals = [getattr(rep, k) for k in rep.CSV_COLUMNS]
    assert all(math.isfinite(v) and v >= 0 for v in vals)
    assert rep.normalizer_g > 0


def test_lp_exponent():
    assert lp_exponent(0.5) == 8.0
    assert lp_exponent(0.0) == 4.0
    with pytest.raises(ValueError):
        lp_exponent(1.0)


@pytest.mark.parametrize("tau", [0.0, 1.0, 1.5, -0.2])
def test_error_report_rejects_tau(pipeline8, tau):
    with pytest.raises(ValueError):
        error_report(pipeline8.tsc, pipeline8.domain, data_preset("boundary"), tau, pipeline8.h, 1.0)


def test_extension_of_zero(disk):
    dom = build_macro_domain("unit_square", 4, disk)
    mesh = mesh_macro(dom, 1 / 32)
    full = mesh_macro(dom, 1 / 32, full=True)
    for mode in ("zero", "energy_minimizing"):
        ext, ratio = extend_into_holes(FieldOnMesh(mesh, np.zeros((mesh.n_nodes, 2))), full, mode)
        assert not ext.values.any()
        assert ratio == 0.0


def test_extension_reproduces_linear_fields(disk):
    dom = build_macro_domain("unit_square", 4, disk)
    mesh = mesh_macro(dom, 1 / 32)
    full = mesh_macro(dom, 1 / 32, full=True)
    M = np.array([[1.0, 2.0], [-0.5, 0.3]])
    ext, ratio = extend_into_holes(FieldOnMesh(mesh, mesh.nodes @ M.T), full)
    assert np.abs(ext.values - full.nodes @ M.T).max() <= 1e-12
    # constant gradient: the energy ratio is the area ratio of holes to material
    holes = full.area - mesh.area
    assert ratio == pytest.approx(holes / mesh.area, rel=1e-10)


def test_extension_rejects_unknown_mode(disk):
    dom = build_macro_domain("unit_square", 4, disk)
    mesh = mesh_macro(dom, 1 / 32)
    with pytest.raises(ValueError):
        extend_into_holes(FieldOnMesh(mesh, np.zeros((mesh.n_nodes, 2))), mesh, "harmonic")


def test_quenched_norm_of_constant(pipeline8):
    mesh = pipeline8.u_eps.mesh
    v = np.zeros((mesh.n_elements, 2, 2))
    v[:, 0, 1] = 3.0
    for p in (1.5, 2.0, 4.0):
        assert quenched_norm(v, p, mesh=mesh, eps=1 / 8) == pytest.approx(3.0, rel=1e-12)


def test_quenched_norm_compares_to_l2(pipeline8):
    g = pipeline8.u_eps.gradient()
    mesh = pipeline8.u_eps.mesh
    q = quenched_norm(g, 2.0, mesh=mesh, eps=1 / 8)
    l2 = math.sqrt(np.dot(mesh.areas, np.sum(g**2, axis=(1, 2))))
    assert 0.5 <= q / l2 <= 2.0


def test_weighted_quenched_norm_is_refinement_stable(pipeline8):
    g = pipeline8.u_eps.gradient()
    mesh = pipeline8.u_eps.mesh
    rho = distance_weight(LayerGeometry(pipeline8.domain), 0.8)
    a = quenched_norm(g, 4.0, rho, BallAverager(mesh, 1 / 8))
    b = quenched_norm(g, 4.0, rho, BallAverager(mesh, 1 / 8, spacing=1 / 64))
    assert math.isfinite(a)
    assert abs(a - b) / b < 0.01


def test_quenched_norm_rejects_p():
    with pytest.raises(ValueError):
        quenched_norm(np.ones((3, 2)), 1.0, averager=object())
