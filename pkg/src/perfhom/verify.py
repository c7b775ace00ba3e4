"""Rate fits over epsilon sweeps and the regularity monitors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import CorrectorSet
from .coefficients import CoefficientField, isotropic_tensor
from .fem import Constraints, FieldOnMesh, Reduction, SolverError, assemble_elasticity, assemble_laplace
from .geometry import LayerGeometry, MacroDomain, build_macro_domain
from .mesh import TriMesh, mesh_macro
from .solve import (ProblemData, f_preset, homogenized_mesh, macro_mesh, solve_divdata_problem,
                    solve_eps_problem, solve_homogenized)
from .twoscale import (BallAverager, ErrorReport, SmoothingKernel, assemble_w_eps, error_report,
                       extend_into_holes, quenched_norm, smoothing_ratios, weighted_extension_ratio)

__all__ = [
    "RateStudy",
    "MonitorReport",
    "fit_rate",
    "trend_slope",
    "FUNCTIONALS",
    "run_pipeline",
    "run_rate_study",
    "lipschitz_probe",
    "lipschitz_monitor",
    "extension_probe",
    "quenched_cz_ratio",
    "extension_monitor",
    "smoothing_monitor",
    "muckenhoupt_constant",
    "estimate_korn_constant",
    "dense_korn_constant",
    "plateau_check",
    "cz_monitor",
    "korn_monitor",
    "muckenhoupt_monitor",
    "cell_checks",
]

# functional -> (ErrorReport attribute, theoretical exponent as a function of tau)
FUNCTIONALS = {
    "h1": ("h1_w", lambda tau: 0.5),
    "l4": ("l4_err", lambda tau: 0.5),
    "l2": ("l2_err", lambda tau: 5.0 / 6.0),
    "lp": ("lp_err_tau", lambda tau: 1.0 - tau / 2.0),
    "sqfn": ("sqfn", lambda tau: 1.0 - tau / 2.0),
}

DEGENERATE_TOL = 1e-12


# ---------------------------------------------------------------------------
# fits

@dataclass
class RateStudy:
    functional: str
    samples: list
    fitted_slope: float = math.nan
    r2: float = math.nan
    status: str = "ok"

    @property
    def flagged(self) -> bool:
        return self.status != "ok" or not (self.r2 >= 0.9)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["flagged"] = self.flagged
        return d


def fit_rate(functional: str, samples) -> RateStudy:
    """Least-squares slope of ``log(value / normalizer)`` against ``log eps``.

    ``samples`` are ``(eps, value, normalizer)`` with strictly decreasing ``eps``.
    """
    samples = [tuple(map(float, s)) for s in samples]
    eps = np.array([s[0] for s in samples])
    if len(eps) > 1 and np.any(np.diff(eps) >= 0):
        raise ValueError("epsilon must be strictly decreasing")
    study = RateStudy(functional, samples)
    if len(samples) < 3:
        study.status = "insufficient"
        return study
    val = np.array([s[1] for s in samples])
    nrm = np.array([s[2] for s in samples])
    if np.all(val <= DEGENERATE_TOL * np.maximum(nrm, 1.0)):
        study.status = "degenerate"
        return study
    if np.any(val <= 0) or np.any(nrm <= 0):
        study.status = "invalid"
        return study
    x = np.log(eps)
    y = np.log(val / nrm)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    study.fitted_slope = float(slope)
    study.r2 = float(1.0 - np.sum(resid**2) / ss) if ss > 0 else 1.0
    return study


def trend_slope(eps, values) -> float:
    """Slope of ``log(value)`` against ``log(1/eps)``; positive means growth as eps shrinks."""
    eps = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(1.0 / eps[ok]), np.log(v[ok]), 1)[0])


@dataclass
class MonitorReport:
    name: str
    rows: list = field(default_factory=list)
    sup: float = math.nan
    slope: float = math.nan
    cap: float | None = None
    slope_cap: float | None = 0.1
    passed: bool = False
    details: dict = field(default_factory=dict)

    def add(self, case: str, epsilon: float, value: float) -> None:
        self.rows.append((self.name, case, float(epsilon), float(value)))

    def finish(self, sups_by_eps: dict, extra_ok: bool = True) -> "MonitorReport":
        eps = sorted(sups_by_eps, reverse=True)
        vals = [sups_by_eps[e] for e in eps]
        self.sup = float(max(vals)) if vals else math.nan
        self.slope = trend_slope(eps, vals) if len(eps) > 1 else 0.0
        ok = bool(np.isfinite(self.sup)) and extra_ok
        if self.slope_cap is not None:
            ok = ok and self.slope <= self.slope_cap
        if self.cap is not None:
            ok = ok and self.sup <= self.cap
        self.passed = ok
        return self

    def summary(self) -> dict:
        return {"sup": self.sup, "slope": self.slope, "cap": self.cap, "slope_cap": self.slope_cap,
                "passed": self.passed, **self.details}


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class PipelineResult:
    domain: MacroDomain
    h: float
    u_eps: FieldOnMesh
    u0: FieldOnMesh
    tsc: object
    report: ErrorReport


def run_pipeline(domain: MacroDomain, coeff: CoefficientField, corrector: CorrectorSet, data: ProblemData,
                 h: float, tau: float = 0.5, kernel: SmoothingKernel | None = None,
                 method: str = "direct") -> PipelineResult:
    """``u_eps``, ``u0``, ``w_eps`` and the error report at one epsilon."""
    u_eps = solve_eps_problem(domain, coeff, data, h, method)
    u0 = solve_homogenized(corrector.A_hat, data, h, method)
    tsc = assemble_w_eps(u_eps, u0, corrector, domain, kernel)
    rep = error_report(tsc, domain, data, tau, h, corrector.theta)
    return PipelineResult(domain, h, u_eps, u0, tsc, rep)


def normalizer(report: ErrorReport) -> float:
    """Sum of the data norms that are active."""
    return report.normalizer_g + report.normalizer_F + report.normalizer_gradF


def run_rate_study(reports: list[ErrorReport], functionals=("h1", "l4", "l2", "lp", "sqfn")) -> dict:
    """Fit every functional over the reports (sorted by decreasing eps)."""
    reports = sorted(reports, key=lambda r: -r.epsilon)
    out = {}
    for name in functionals:
        attr = FUNCTIONALS[name][0]
        out[name] = fit_rate(name, [(r.epsilon, getattr(r, attr), normalizer(r)) for r in reports])
    return out


# ---------------------------------------------------------------------------
# large-scale Lipschitz

def _dyadic_radii(eps: float, top: float = 0.5) -> list[float]:
    r, out = top, []
    while r >= eps * (1 - 1e-12):
        out.append(r)
        r /= 2
    return out


def lipschitz_ratios(u: FieldOnMesh, eps: float, center, top: float = 0.5) -> dict:
    """``(avg_{D_r} |grad u|^2 / avg_{D_top} |grad u|^2)^{1/2}`` for dyadic ``eps <= r <= top``.

    ``D_r`` is the set of elements whose centroid lies in ``B_r(center)``.
    """
    c = np.asarray(center, dtype=float)
    if not (c[0] - top >= -1e-12 and c[0] + top <= 1 + 1e-12 and c[1] + top <= 1 + 1e-12 and c[1] >= -1e-12):
        raise ValueError("the monitored patch cannot host the ball of radius 1/2")
    mesh = u.mesh
    g = u.gradient()
    sq = np.sum(g.reshape(len(g), -1) ** 2, axis=1) * mesh.areas
    dist = np.linalg.norm(mesh.centroids - c, axis=1)

    def avg(r):
        sel = dist < r
        return sq[sel].sum() / mesh.areas[sel].sum()
    ref = avg(top)
    return {r: math.sqrt(avg(r) / ref) for r in _dyadic_radii(eps, top)}


def lipschitz_probe(u: FieldOnMesh, eps: float, boundary_point=(0.5, 0.0),
                    interior_point=(0.5, 0.5)) -> dict:
    """Ratios keyed by ``(label, r)`` at a flat boundary point and an interior point.

    ``u`` must vanish on the bottom edge around ``boundary_point``.
    """
    out = {}
    for label, pt in (("boundary", boundary_point), ("interior", interior_point)):
        for r, v in lipschitz_ratios(u, eps, pt).items():
            out[(label, r)] = v
    return out


def lipschitz_monitor(probes_by_eps: dict) -> MonitorReport:
    """Sup over radii and points per eps; the trend of the sups over eps is capped."""
    rep = MonitorReport("lipschitz")
    sups = {}
    for eps in sorted(probes_by_eps, reverse=True):
        probe = probes_by_eps[eps]
        for (label, r), v in sorted(probe.items()):
            rep.add(f"{label},r={r:.6g}", eps, v)
        sups[eps] = max(probe.values())
        rep.add("sup", eps, sups[eps])
    return rep.finish(sups)


# ---------------------------------------------------------------------------
# quenched Calderon-Zygmund

CZ_PRESETS = ("diagonal", "trig", "random_trig", "rough")
CZ_EXPONENTS = (1.5, 2.0, 3.0, 4.0)
CZ_WEIGHTS = (0.0, 0.8, -0.5)


def _weight(layer: LayerGeometry, beta: float):
    if beta == 0.0:
        return None
    return lambda x: layer.delta(x) ** beta


def quenched_cz_ratio(domain: MacroDomain, coeff: CoefficientField, h: float, presets=CZ_PRESETS,
                      p_list=CZ_EXPONENTS, betas=CZ_WEIGHTS, seed: int = 0, method: str = "direct",
                      averager: BallAverager | None = None) -> dict:
    """Ratios ``quenched(grad phi) / quenched(f)`` keyed by ``(p, beta, preset)``; also returns the fields."""
    eps = domain.epsilon
    mesh = macro_mesh(domain, h)
    layer = LayerGeometry(domain)
    avg = averager or BallAverager(mesh, eps)
    out, fields = {}, {}
    for name in presets:
        phi = solve_divdata_problem(domain, coeff, f_preset(name, seed), h, method)
        fe = phi.info["f_elements"]
        fields[name] = phi
        g = phi.gradient()
        for p in p_list:
            for beta in betas:
                den = quenched_norm(fe, p, _weight(layer, beta), avg)
                if den == 0.0:
                    out[(p, beta, name)] = math.nan
                    continue
                out[(p, beta, name)] = quenched_norm(g, p, _weight(layer, beta), avg) / den
    return {"ratios": out, "fields": fields}


def cz_monitor(ratios_by_eps: dict, mu0: float, gate_betas=(0.0, 0.8), slack: float = 0.05) -> MonitorReport:
    """Trend of the sup ratio per ``(p, beta)`` and the energy cap at ``p = 2``, unweighted."""
    rep = MonitorReport("quenched_cz", slope_cap=None)
    cases = sorted({(p, b) for r in ratios_by_eps.values() for (p, b, _) in r})
    slopes, passed = {}, True
    cap = (1.0 / mu0) * (1 + slack)
    eps_list = sorted(ratios_by_eps, reverse=True)
    for p, b in cases:
        sups = []
        for eps in eps_list:
            vals = [v for (pp, bb, _), v in ratios_by_eps[eps].items() if pp == p and bb == b and np.isfinite(v)]
            s = max(vals) if vals else math.nan
            sups.append(s)
            rep.add(f"p={p:g},beta={b:g}", eps, s)
        sl = trend_slope(eps_list, sups)
        slopes[f"p={p:g},beta={b:g}"] = sl
        if b in gate_betas:
            passed = passed and sl <= 0.1 and bool(np.all(np.isfinite(sups)))
    energy = max(v for r in ratios_by_eps.values() for (p, b, _), v in r.items()
                 if p == 2.0 and b == 0.0 and np.isfinite(v))
    rep.sup = float(max(v for r in ratios_by_eps.values() for v in r.values() if np.isfinite(v)))
    rep.slope = max(sl for k, sl in slopes.items() if any(f"beta={b:g}" in k for b in gate_betas))
    rep.cap = cap
    rep.details = {"slopes": slopes, "energy_ratio": energy, "energy_cap": cap,
                   "energy_passed": bool(energy <= cap)}
    rep.passed = bool(passed and energy <= cap)
    return rep


# ---------------------------------------------------------------------------
# extension

def extension_probe(domain: MacroDomain, h: float, fields, betas=(0.0, 0.8)) -> dict:
    """Energy-minimizing hole extension of each field: ``(k, "hole")`` is the plain hole/material
    energy ratio, ``(k, beta)`` the weighted ratio over the filled and perforated domains."""
    full = mesh_macro(domain, h, full=True)
    layer = LayerGeometry(domain)
    out = {}
    for k, fld in enumerate(fields):
        ext, ratio = extend_into_holes(fld, full, "energy_minimizing")
        out[(k, "hole")] = ratio
        for beta in betas:
            out[(k, float(beta))] = weighted_extension_ratio(fld, ext, layer, beta)
    return out


def extension_monitor(probes_by_eps: dict) -> MonitorReport:
    """Sup of the weighted ratios per eps and their trend."""
    rep = MonitorReport("extension")
    sups = {}
    for eps in sorted(probes_by_eps, reverse=True):
        probe = probes_by_eps[eps]
        for (k, key), v in sorted(probe.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            rep.add(f"field={k},{'hole' if key == 'hole' else f'beta={key:g}'}", eps, v)
        sups[eps] = max(v for (k, key), v in probe.items() if key != "hole")
        rep.add("sup", eps, sups[eps])
    return rep.finish(sups)


# ---------------------------------------------------------------------------
# smoothing suite

SMOOTHING_KEYS = ("oscillating", "difference", "weighted_plus", "weighted_minus", "weighted_difference")


def smoothing_monitor(eps_list, kernel: SmoothingKernel | None = None) -> MonitorReport:
    """Trend of each smoothing ratio over the sweep; constants must be reproduced to 1e-12."""
    rep = MonitorReport("smoothing", slope_cap=None)
    data = {eps: smoothing_ratios(eps, kernel) for eps in sorted(eps_list, reverse=True)}
    slopes, ok = {}, True
    for key in SMOOTHING_KEYS:
        eps = [e for e in data if np.isfinite(data[e][key])]
        vals = [data[e][key] for e in eps]
        for e, v in zip(eps, vals):
            rep.add(key, e, v)
        slopes[key] = trend_slope(eps, vals)
        ok = ok and len(vals) >= 2 and slopes[key] <= 0.1
    const = max(d["constant"] for d in data.values())
    for e, d in data.items():
        rep.add("constant", e, d["constant"])
    rep.sup = float(max(v for d in data.values() for k, v in d.items() if k != "constant" and np.isfinite(v)))
    rep.slope = max(slopes.values())
    rep.details = {"slopes": slopes, "constant_defect": const}
    rep.passed = bool(ok and const <= 1e-12)
    return rep


# ---------------------------------------------------------------------------
# Muckenhoupt constants

def _graded_rule(n_gauss: int, depth: int = 24):
    """Composite Gauss rule on [0, 1] graded geometrically toward both ends."""
    inner = 0.5 ** np.arange(depth, 0, -1)
    brk = np.concatenate([[0.0], inner, 1.0 - inner[::-1], [1.0]])
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    half = 0.5 * np.diff(brk)
    mid = 0.5 * (brk[1:] + brk[:-1])
    return (mid[:, None] + half[:, None] * t).ravel(), (half[:, None] * w).ravel()


def _cube_averages(rho, p, lo, s, t, w):
    """Averages of ``rho`` and ``rho^{-1/(p-1)}`` over squares ``lo + s [0,1]^2`` with a tensor rule."""
    TX, TY = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w).ravel()
    x = lo[:, 0, None] + s * TX.ravel()[None]
    y = lo[:, 1, None] + s * TY.ravel()[None]
    r = np.asarray(rho(np.stack([x, y], axis=-1)), dtype=float)
    return r @ W, (r ** (-1.0 / (p - 1))) @ W


def muckenhoupt_constant(rho, p: float, max_level: int, n_gauss: int = 6, return_levels: bool = False):
    """Sup over dyadic subsquares of the unit square, levels ``0..max_level``, of the A_p quantity.

    Squares touching the boundary use a rule graded toward their edges, where
    distance weights vary fastest.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    t, w = 0.5 * (t + 1), 0.5 * w
    tg, wg = _graded_rule(4)
    per_level = []
    for lev in range(max_level + 1):
        k = 2**lev
        s = 1.0 / k
        I, J = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        lo = np.column_stack([I.ravel(), J.ravel()]) * s
        edge = (I.ravel() == 0) | (J.ravel() == 0) | (I.ravel() == k - 1) | (J.ravel() == k - 1)
        a = np.empty(k * k)
        b = np.empty(k * k)
        a[~edge], b[~edge] = _cube_averages(rho, p, lo[~edge], s, t, w)
        a[edge], b[edge] = _cube_averages(rho, p, lo[edge], s, tg, wg)
        per_level.append(float(np.max(a * b ** (p - 1))))
    sup = max(per_level)
    return (sup, per_level) if return_levels else sup


# ---------------------------------------------------------------------------
# Korn constants

def _mass_matrix(mesh: TriMesh, ncomp: int = 2) -> sp.csr_matrix:
    loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    el = mesh.elements
    rows = np.repeat(el, 3, axis=1).ravel()
    cols = np.tile(el, (1, 3)).ravel()
    vals = (mesh.areas[:, None, None] * loc[None]).ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return sp.kron(M, sp.identity(ncomp), format="csr")


def korn_matrices(mesh: TriMesh, dirichlet_nodes: np.ndarray):
    """Reduced ``(A, B)`` with ``A`` the symmetric-gradient form and ``B`` the H^1 Gram matrix."""
    A = assemble_elasticity(mesh, isotropic_tensor(0.0, 0.5))
    L = sp.kron(assemble_laplace(mesh), sp.identity(2), format="csr")
    B = _mass_matrix(mesh) + L
    red = Reduction(mesh.n_nodes, Constraints(2, dirichlet_nodes=dirichlet_nodes))
    P = red.P
    return (P.T @ A @ P).tocsc(), (P.T @ B @ P).tocsc()


def smallest_generalized_eigenvalue(A, B, tol: float = 1e-10, maxiter: int = 5000, ncv: int = 40):
    """Smallest ``A x = lambda B x`` by shift-invert Lanczos about zero.

    This is inverse iteration accelerated by a Krylov space; the spectrum of the
    symmetric-gradient quotient clusters at its infimum, where plain inverse
    iteration stalls.
    """
    n = A.shape[0]
    if n <= 50:
        return float(sla.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]), 0
    lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    v0 = np.ones(n)
    try:
        vals = spla.eigsh(A, k=1, M=B, sigma=0.0, which="LM", OPinv=op, tol=tol, maxiter=maxiter,
                          ncv=min(ncv, n - 1), v0=v0, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigen-iteration did not converge: {exc}") from exc
    return float(vals[0]), None


def estimate_korn_constant(mesh: TriMesh, tol: float = 1e-10) -> dict:
    """``C = q^{-1/2}`` for the smallest ``||e(w)||^2 / ||w||_{H^1}^2`` with zero trace on the outer boundary."""
    bn = mesh.boundary_nodes("dirichlet_outer")
    A, B = korn_matrices(mesh, bn)
    q, _ = smallest_generalized_eigenvalue(A, B, tol=tol)
    return {"quotient": q, "C": q**-0.5, "n_free": A.shape[0]}


def dense_korn_constant(mesh: TriMesh) -> float:
    """Dense oracle for small meshes."""
    bn = mesh.boundary_nodes("dirichlet_outer")
    A, B = korn_matrices(mesh, bn)
    q = sla.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(q) ** -0.5


def korn_monitor(eps_list, perforation, h_divisor: int = 8) -> MonitorReport:
    rep = MonitorReport("korn", slope_cap=None)
    vals = {}
    for eps in sorted(eps_list, reverse=True):
        n = int(round(1 / eps))
        dom = build_macro_domain("unit_square", n, perforation)
        mesh = macro_mesh(dom, eps / h_divisor)
        vals[eps] = estimate_korn_constant(mesh)["C"]
        rep.add("C", eps, vals[eps])
    v = np.array(list(vals.values()))
    spread = float(v.max() / v.min() - 1.0)
    rep.sup = float(v.max())
    rep.slope = trend_slope(list(vals), list(v))
    rep.details = {"relative_variation": spread}
    rep.passed = bool(np.all(np.isfinite(v)) and spread < 0.25)
    return rep


def muckenhoupt_monitor(perforation, eps_list=(1 / 8, 1 / 32, 1 / 128, 1 / 512),
                        betas=(0.4, 0.8, 0.99, -1.5), max_level: int = 6) -> MonitorReport:
    """A_2 constants of ``delta^beta`` as the offset ``10 eps`` of the extended square shrinks.

    Passes when, at every eps, the A_2 exponents give finite constants that increase with
    ``beta`` and do not change from level ``max_level - 1`` to ``max_level``, and when every
    exponent outside (-1, 1) grows faster over the sweep than any A_2 exponent.
    """
    rep = MonitorReport("muckenhoupt", slope_cap=None)
    consts, stable = {}, True
    eps_sorted = sorted(eps_list, reverse=True)
    for eps in eps_sorted:
        layer = LayerGeometry(build_macro_domain("unit_square", int(round(1 / eps)), perforation))
        for beta in betas:
            c, levels = muckenhoupt_constant(lambda x: layer.delta(x) ** beta, 2.0, max_level,
                                             return_levels=True)
            consts[(eps, beta)] = c
            rep.add(f"beta={beta:g}", eps, c)
            if -1 < beta < 1:
                stable = stable and max(levels[:-1]) >= c * (1 - 1e-9)
    a2 = sorted(b for b in betas if -1 < b < 1)
    outside = [b for b in betas if not -1 < b < 1]
    increasing = all(consts[(e, x)] <= consts[(e, y)] for e in eps_sorted for x, y in zip(a2, a2[1:]) if x >= 0)
    slopes = {b: trend_slope(eps_sorted, [consts[(e, b)] for e in eps_sorted]) for b in betas}
    separated = all(slopes[o] > max(slopes[b] for b in a2) for o in outside)
    rep.sup = float(max(consts[(e, b)] for e in eps_sorted for b in a2))
    rep.slope = max(slopes[b] for b in a2)
    rep.details = {"slopes": {f"{b:g}": v for b, v in slopes.items()}, "level_stable": stable,
                   "increasing": increasing, "outside_a2": outside, "outside_grows_faster": separated}
    rep.passed = bool(np.isfinite(rep.sup) and stable and increasing and separated)
    return rep


# ---------------------------------------------------------------------------
# cell algebra

def cell_checks(cs: CorrectorSet) -> dict:
    """The algebraic checks of the cell solve with their limits."""
    d = cs.diagnostics
    porosity = abs(cs.theta + cs.spec.hole_area - 1.0)
    items = [
        ("A_hat_symmetry", d["A_hat_symmetry"], "<=", 1e-8),
        ("mu0_hat", d["mu0_hat"], ">", 0.0),
        ("porosity", porosity, "<=", 1e-6),
        ("chi_mean", d["chi_mean_max"], "<=", 1e-10),
        ("b_mean", d["b_mean_max"], "<=", 1e-8),
        ("E_antisymmetry", d["E_antisymmetry"], "<=", 0.0),
        ("div_E_residual", d["div_E_residual"], "<=", 1e-6),
    ]
    out = {}
    for name, v, rel, lim in items:
        ok = v > lim if rel == ">" else v <= lim
        out[name] = {"value": float(v), "relation": rel, "limit": lim, "passed": bool(ok)}
    return out


# ---------------------------------------------------------------------------
# discretization plateau

def plateau_check(coarse: ErrorReport, fine: ErrorReport, names=("h1", "l4", "l2", "lp", "sqfn"),
                  tol: float = 0.10) -> MonitorReport:
    """Relative change of each functional when the mesh size halves."""
    rep = MonitorReport("plateau", slope_cap=None)
    changes = {}
    for name in names:
        attr = FUNCTIONALS[name][0]
        a, b = getattr(coarse, attr), getattr(fine, attr)
        changes[name] = abs(b - a) / abs(b) if b != 0 else (0.0 if a == 0 else math.inf)
        rep.add(name, coarse.epsilon, changes[name])
    rep.sup = float(max(changes.values()))
    rep.cap = tol
    rep.details = {"changes": changes}
    rep.passed = rep.sup < tol
    return rep
