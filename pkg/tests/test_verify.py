import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.cell import build_corrector_set
from perfhom.geometry import LayerGeometry, build_macro_domain
from perfhom.mesh import structured_square_mesh, tag_square_boundary
from perfhom.solve import data_preset, macro_mesh, solve_eps_problem
from perfhom.twoscale import ErrorReport
from perfhom.verify import (
    MonitorReport,
    cell_checks,
    cz_monitor,
    dense_korn_constant,
    estimate_korn_constant,
    fit_rate,
    korn_matrices,
    lipschitz_probe,
    lipschitz_ratios,
    muckenhoupt_constant,
    muckenhoupt_monitor,
    plateau_check,
    quenched_cz_ratio,
    run_pipeline,
    run_rate_study,
    trend_slope,
)

EPS = (1 / 4, 1 / 8, 1 / 16, 1 / 32)


@settings(max_examples=40)
@given(st.floats(0.1, 2.0), st.floats(0.01, 100.0), st.floats(0.1, 10.0))
def test_fit_recovers_power_law(rate, c, nrm):
    study = fit_rate("x", [(e, c * nrm * e**rate, nrm) for e in EPS])
    assert study.fitted_slope == pytest.approx(rate, abs=1e-9)
    assert study.r2 == pytest.approx(1.0)
    assert not study.flagged


def test_fit_status_flags():
    assert fit_rate("x", [(0.5, 1.0, 1.0), (0.25, 0.5, 1.0)]).status == "insufficient"
    assert fit_rate("x", [(e, 0.0, 1.0) for e in EPS]).status == "degenerate"
    noisy = fit_rate("x", [(e, v, 1.0) for e, v in zip(EPS, (1.0, 0.2, 0.9, 0.3))])
    assert noisy.r2 < 0.9 and noisy.flagged
    with pytest.raises(ValueError):
        fit_rate("x", [(0.25, 1.0, 1.0), (0.5, 1.0, 1.0), (0.125, 1.0, 1.0)])


def test_trend_slope():
    assert trend_slope(EPS, [2.0] * 4) == pytest.approx(0.0, abs=1e-12)
    assert trend_slope(EPS, [1 / e for e in EPS]) == pytest.approx(1.0)


def test_single_blow_up_fails_a_monitor():
    rep = MonitorReport("m").finish({0.5: 1.0, 0.25: math.inf, 0.125: 1.0})
    assert not rep.passed
    assert MonitorReport("m").finish({0.5: 1.0, 0.25: 1.01, 0.125: 1.0}).passed


@pytest.fixture(scope="module")
def coarse_cs(disk, lame):
    return build_corrector_set(disk, lame, 1 / 32)


def test_rate_fit_is_scale_invariant(disk, lame, coarse_cs):
    fits = []
    for scale in (1.0, 2.0):
        reps = []
        for n in (4, 8, 16):
            dom = build_macro_domain("unit_square", n, disk)
            reps.append(run_pipeline(dom, lame, coarse_cs, data_preset("boundary", scale=scale),
                                     dom.epsilon / 8).report)
        fits.append(run_rate_study(reps))
    for name in fits[0]:
        assert fits[0][name].fitted_slope == pytest.approx(fits[1][name].fitted_slope, abs=1e-10)


def test_no_hole_rate_study_is_degenerate(nohole, lame):
    cs = build_corrector_set(nohole, lame, 1 / 32)
    reps = []
    for n in (4, 8, 16):
        dom = build_macro_domain("unit_square", n, nohole)
        reps.append(run_pipeline(dom, lame, cs, data_preset("boundary"), dom.epsilon / 8).report)
    for study in run_rate_study(reps).values():
        assert study.status == "degenerate"


def test_lipschitz_self_ratio_and_smooth_case(nohole, lame):
    dom = build_macro_domain("unit_square", 8, nohole)
    u = solve_eps_problem(dom, lame, data_preset("boundary"), 1 / 64)
    probe = lipschitz_probe(u, dom.epsilon)
    assert probe[("boundary", 0.5)] == pytest.approx(1.0)
    assert probe[("interior", 0.5)] == pytest.approx(1.0)
    assert all(math.isfinite(v) for v in probe.values())
    assert min(r for _, r in probe) == pytest.approx(dom.epsilon)


def test_lipschitz_rejects_bad_patch(nohole, lame):
    dom = build_macro_domain("unit_square", 4, nohole)
    u = solve_eps_problem(dom, lame, data_preset("boundary"), 1 / 32)
    with pytest.raises(ValueError):
        lipschitz_ratios(u, dom.epsilon, (0.2, 0.0))


def test_cz_ratios(disk, lame):
    dom = build_macro_domain("unit_square", 4, disk)
    out = quenched_cz_ratio(dom, lame, 1 / 32, presets=("diagonal", "trig", "zero"),
                            p_list=(2.0, 4.0), betas=(0.0, 0.8))
    r = out["ratios"]
    assert math.isnan(r[(2.0, 0.0, "zero")])
    # symmetric data: the energy estimate applies to the plain p = 2 ratio
    assert r[(2.0, 0.0, "diagonal")] <= 1.05 / lame.mu0
    assert r[(2.0, 0.0, "trig")] <= 1.05 / lame.mu0
    assert all(np.isfinite(v) for k, v in r.items() if k[2] != "zero")
    rep = cz_monitor({0.25: r}, lame.mu0)
    assert rep.details["energy_passed"]


def test_muckenhoupt_constant_weight():
    c, levels = muckenhoupt_constant(lambda x: np.ones(x.shape[:-1]), 2.0, 4, return_levels=True)
    assert np.allclose(levels, 1.0, atol=1e-13)


def test_muckenhoupt_power_weights(disk):
    layer = LayerGeometry(build_macro_domain("unit_square", 8, disk))
    vals = {}
    for beta in (0.4, 0.8):
        c, lev = muckenhoupt_constant(lambda x: layer.delta(x) ** beta, 2.0, 6, return_levels=True)
        assert math.isfinite(c)
        assert max(lev[:-1]) >= c * (1 - 1e-9)
        vals[beta] = c
    assert vals[0.4] < vals[0.8]


def test_muckenhoupt_monitor_separates_outside_weights(disk):
    rep = muckenhoupt_monitor(disk, betas=(0.8, -1.5))
    assert rep.passed
    assert rep.details["slopes"]["-1.5"] > rep.details["slopes"]["0.8"]


def test_korn_matches_dense_oracle():
    mesh = tag_square_boundary(structured_square_mesh(8))
    est = estimate_korn_constant(mesh)
    assert est["n_free"] > 50
    assert est["C"] == pytest.approx(dense_korn_constant(mesh), rel=1e-8)


def test_korn_excludes_rigid_motions():
    mesh = tag_square_boundary(structured_square_mesh(4))
    A_free, _ = korn_matrices(mesh, np.zeros(0, dtype=np.int64))
    rot = np.column_stack([-mesh.nodes[:, 1], mesh.nodes[:, 0]]).ravel()
    assert abs(rot @ (A_free @ rot)) <= 1e-12
    A, B = korn_matrices(mesh, mesh.boundary_nodes("dirichlet_outer"))
    assert np.linalg.eigvalsh(A.toarray()).min() > 1e-3


def test_korn_on_perforated_domain(disk):
    dom = build_macro_domain("unit_square", 4, disk)
    est = estimate_korn_constant(macro_mesh(dom, 1 / 32))
    assert 1.0 < est["C"] < 10.0


def test_cell_checks_layout(coarse_cs):
    checks = cell_checks(coarse_cs)
    assert set(checks) == {"A_hat_symmetry", "mu0_hat", "porosity", "chi_mean", "b_mean",
                           "E_antisymmetry", "div_E_residual"}
    assert checks["E_antisymmetry"]["passed"]
    assert checks["mu0_hat"]["passed"]


def _report(scale):
    return ErrorReport(0.125, 1 / 64, scale, scale, scale, scale, 1.0, 0.0, 0.0, 0.8, l4_err=scale)


def test_plateau_check():
    assert plateau_check(_report(1.0), _report(1.05)).passed
    rep = plateau_check(_report(1.0), _report(1.2))
    assert not rep.passed
    assert rep.sup == pytest.approx(0.2 / 1.2)
