"""Smoothing operator, first-order two-scale corrector, hole extensions and error functionals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .cell import CorrectorSet
from .fem import (Constraints, FieldOnMesh, LinearSolver, assemble_elasticity, locator, triangle_rule)
from .coefficients import isotropic_tensor
from .geometry import CutOff, LayerGeometry, MacroDomain, PerforationSpec, to_cell_coords
from .mesh import HOLE, MATERIAL, TriMesh

__all__ = [
    "SmoothingKernel",
    "smooth",
    "TwoScaleCorrector",
    "assemble_w_eps",
    "extend_into_holes",
    "ErrorReport",
    "error_report",
    "lp_exponent",
    "quenched_norm",
    "BallAverager",
    "smoothing_ratios",
    "weighted_extension_ratio",
]


# ---------------------------------------------------------------------------
# smoothing

class SmoothingKernel:
    """``zeta(x) = (20/pi) (1 - 4|x|^2)^4`` on ``|x| < 1/2`` with a polar Gauss rule."""

    c2 = 20.0 / math.pi

    def __init__(self, n_radial: int = 8, n_angular: int = 16):
        if n_radial < 8 or n_angular < 8:
            raise ValueError("the smoothing rule needs at least 8 x 8 points")
        t, w = np.polynomial.legendre.leggauss(n_radial)
        r = 0.25 * (t + 1.0)
        wr = 0.25 * w * r
        th = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        wt = np.full(n_angular, 2 * np.pi / n_angular)
        R, TH = np.meshgrid(r, th, indexing="ij")
        self.points = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
        self.weights = np.outer(wr, wt).ravel()
        rr = np.sum(self.points**2, axis=1)
        self.w_value = self.weights * self.profile(np.sqrt(rr))
        # d/dx zeta = c (4)(1 - 4 r^2)^3 (-8 x)
        self.w_grad = (self.weights * self.c2 * -32.0 * (1 - 4 * rr) ** 3)[:, None] * self.points

    @classmethod
    def profile(cls, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 0.5, cls.c2 * np.clip(1 - 4 * r**2, 0, None) ** 4, 0.0)

    def mass(self) -> float:
        """Quadrature value of the kernel integral (exactly one)."""
        return float(self.w_value.sum())

    def scaled(self, x, eps):
        """``zeta_eps(x) = eps^-2 zeta(x/eps)``."""
        return self.profile(np.linalg.norm(np.asarray(x) / eps, axis=-1)) / eps**2


def smooth(fn, eps: float, points: np.ndarray, kernel: SmoothingKernel | None = None,
           grad: bool = False, chunk: int = 20000):
    """``S_eps(fn)`` at ``points`` (and its gradient when ``grad``).

    ``fn`` maps (m, 2) points to (m, ...) values; a ``FieldOnMesh`` is extended by zero.
    """
    kernel = kernel or SmoothingKernel()
    if isinstance(fn, FieldOnMesh):
        field_ = fn
        fn = lambda x: field_.evaluate(x, outside="zero")  # noqa: E731
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    q = len(kernel.weights)
    vals, grads = [], []
    for s in range(0, len(pts), chunk):
        x = pts[s:s + chunk]
        z = x[:, None, :] - eps * kernel.points[None]
        fz = np.asarray(fn(z.reshape(-1, 2)), dtype=float)
        fz = fz.reshape((len(x), q) + fz.shape[1:])
        vals.append(np.einsum("q,nq...->n...", kernel.w_value, fz))
        if grad:
            grads.append(np.einsum("qk,nq...->n...k", kernel.w_grad, fz) / eps)
    v = np.concatenate(vals) if vals else np.zeros((0,))
    if grad:
        return v, np.concatenate(grads)
    return v


# ---------------------------------------------------------------------------
# first-order corrector

def _grad_u0_field(u0: FieldOnMesh, psi: CutOff):
    """Callable ``x -> psi(x) grad u0(x)`` with indices (beta, j); zero off the square."""
    g0 = u0.gradient()
    loc = locator(u0.mesh)

    def fn(x):
        elem, _ = loc.locate(x)
        out = g0[np.maximum(elem, 0)] * psi(x)[:, None, None]
        out[elem < 0] = 0.0
        return out
    return fn


class _ChiEvaluator:
    """Corrector values and cell gradients at macro points."""

    def __init__(self, corrector: CorrectorSet, mesh: TriMesh, eps: float):
        self.cs = corrector
        self.mesh = mesh
        self.eps = eps
        cell = getattr(mesh, "cell_mesh", None)
        self.matched = (cell is not None and cell.n_nodes == corrector.mesh.n_nodes
                        and np.array_equal(cell.nodes, corrector.mesh.nodes)
                        and np.array_equal(cell.elements, corrector.mesh.elements))

    def at_nodes(self) -> np.ndarray:
        if self.matched:
            return self.cs.chi[self.mesh.cell_node]
        return self._eval(self.mesh.nodes)[0]

    def at_points(self, elem: np.ndarray, bary: np.ndarray, x: np.ndarray):
        """``chi(x/eps)`` (n, gamma, beta, j) and ``grad_y chi`` (n, gamma, k, beta, j)."""
        if self.matched:
            ce = self.mesh.cell_element[elem]
            nodes = self.cs.mesh.elements[ce]
            chi = np.einsum("na,nagbj->ngbj", bary, self.cs.chi[nodes])
            return chi, self.cs.grad_chi[ce]
        return self._eval(x)

    def _eval(self, x):
        y = to_cell_coords(x, self.eps)
        loc = locator(self.cs.mesh)
        elem, bary = loc.locate(y, tol=1e-9)
        miss = elem < 0
        if miss.any():
            e2, b2 = loc.nearest(y[miss])
            gap = _outside_distance(self.cs.mesh, e2, y[miss])
            if np.any(gap > 2 * self.cs.mesh.h):
                raise ValueError("macro point maps into the hole of the cell mesh")
            elem[miss], bary[miss] = e2, b2
        nodes = self.cs.mesh.elements[elem]
        chi = np.einsum("na,nagbj->ngbj", bary, self.cs.chi[nodes])
        return chi, self.cs.grad_chi[elem]


def _outside_distance(mesh: TriMesh, elem, pts):
    c = mesh.centroids[elem]
    return np.linalg.norm(pts - c, axis=1)


@dataclass
class TwoScaleCorrector:
    """``w = u_eps - u0 - eps chi(x/eps) S_eps(psi grad u0)`` with its ingredients."""

    w: FieldOnMesh
    u_eps: FieldOnMesh
    u0: FieldOnMesh
    S_nodes: np.ndarray
    gradS_nodes: np.ndarray
    eps: float
    chi_eval: _ChiEvaluator
    psi: CutOff
    info: dict = field(default_factory=dict)

    def quadrature(self, degree: int = 5):
        """Points, weights (area-scaled) and element ids of the macro rule."""
        mesh = self.w.mesh
        bq, wq = triangle_rule(degree)
        p = mesh.nodes[mesh.elements]
        x = np.einsum("qa,ead->eqd", bq, p)
        wts = mesh.areas[:, None] * wq[None, :]
        return x, wts, bq

    def fields_at_quadrature(self, degree: int = 5):
        """``u_eps - u0`` and ``grad w``, ``grad(u_eps - u0)`` at macro quadrature points."""
        mesh = self.w.mesh
        x, wts, bq = self.quadrature(degree)
        ne, nq = wts.shape
        elem = np.repeat(np.arange(ne), nq)
        bary = np.tile(bq, (ne, 1))
        xf = x.reshape(-1, 2)
        ue = self.u_eps.at(elem, bary)
        g_ue = self.u_eps.gradient()[elem]
        loc0 = locator(self.u0.mesh)
        e0, b0 = loc0.locate(xf)
        if np.any(e0 < 0):
            raise ValueError("macro quadrature point outside the homogenized mesh")
        u0 = self.u0.at(e0, b0)
        g_u0 = self.u0.gradient()[e0]
        chi, gchi = self.chi_eval.at_points(elem, bary, xf)
        nodes = mesh.elements[elem]
        S = np.einsum("na,nabj->nbj", bary, self.S_nodes[nodes])
        dS = np.einsum("na,nabjk->nbjk", bary, self.gradS_nodes[nodes])
        # grad(eps chi(x/eps) S) = grad_y chi S + eps chi grad S
        g_corr = np.einsum("ngkbj,nbj->ngk", gchi, S) + self.eps * np.einsum("ngbj,nbjk->ngk", chi, dS)
        diff = ue - u0
        g_diff = g_ue - g_u0
        g_w = g_diff - g_corr
        return {
            "x": xf, "weights": wts.ravel(), "elem": elem,
            "diff": diff, "grad_diff": g_diff, "grad_w": g_w,
        }


def assemble_w_eps(u_eps: FieldOnMesh, u0: FieldOnMesh, corrector: CorrectorSet, domain: MacroDomain,
                   kernel: SmoothingKernel | None = None, bands: tuple[float, float] = (3.0, 4.0)) -> TwoScaleCorrector:
    """Nodal first-order corrector on the perforated mesh."""
    eps = domain.epsilon
    kernel = kernel or SmoothingKernel()
    mesh = u_eps.mesh
    psi = CutOff(bands[0] * eps, bands[1] * eps)
    fn = _grad_u0_field(u0, psi)
    S, dS = smooth(fn, eps, mesh.nodes, kernel, grad=True)
    chi_eval = _ChiEvaluator(corrector, mesh, eps)
    chi_n = chi_eval.at_nodes()
    u0_n = u0.evaluate(mesh.nodes, outside="raise")
    corr = eps * np.einsum("ngbj,nbj->ng", chi_n, S)
    w = FieldOnMesh(mesh, u_eps.values - u0_n - corr)
    return TwoScaleCorrector(w, u_eps, u0, S, dS, eps, chi_eval, psi,
                             info={"matched_corrector": chi_eval.matched})


# ---------------------------------------------------------------------------
# extension into holes

def _full_mesh_map(mesh: TriMesh, full: TriMesh) -> np.ndarray:
    """Index in ``full`` of every node of ``mesh`` (coordinates coincide)."""
    tree = cKDTree(full.nodes)
    d, idx = tree.query(mesh.nodes)
    if np.any(d > 1e-9):
        raise ValueError("perforated mesh nodes are not nodes of the full mesh")
    return idx


def extend_into_holes(field_: FieldOnMesh, full_mesh: TriMesh, mode: str = "energy_minimizing",
                      lam: float = 1.0, mu: float = 1.0):
    """Extend a perforated-mesh vector field to the mesh with holes filled.

    ``zero`` sets hole-interior nodes to 0; ``energy_minimizing`` solves the
    isotropic elasticity Dirichlet problem in each hole with the field's trace.
    Returns the extended field and the energy ratio hole / annulus.
    """
    if mode not in ("zero", "energy_minimizing"):
        raise ValueError(f"unknown extension mode {mode!r}")
    if field_.values.ndim != 2:
        raise ValueError("extension expects a vector field")
    idx = _full_mesh_map(field_.mesh, full_mesh)
    vals = np.zeros((full_mesh.n_nodes, 2))
    vals[idx] = field_.values
    known = np.zeros(full_mesh.n_nodes, dtype=bool)
    known[idx] = True
    hole = full_mesh.element_tags == HOLE
    if mode == "energy_minimizing" and np.any(~known):
        C = isotropic_tensor(lam, mu)
        K = assemble_elasticity(full_mesh, C, elements=np.flatnonzero(hole))
        used = np.zeros(full_mesh.n_nodes, dtype=bool)
        used[full_mesh.elements[hole].ravel()] = True
        # nodes outside the holes are fixed; the solve only moves hole-interior nodes
        fixed = np.flatnonzero(known | ~used)
        con = Constraints(2, dirichlet_nodes=fixed, dirichlet_values=vals[fixed])
        u, _ = LinearSolver(K, con, full_mesh.n_nodes).solve(np.zeros(2 * full_mesh.n_nodes))
        vals = u.reshape(-1, 2)
    ext = FieldOnMesh(full_mesh, vals)
    g = ext.gradient()
    sq = np.sum(g.reshape(len(g), -1) ** 2, axis=1) * full_mesh.areas
    mat_sq = np.sum(field_.gradient().reshape(field_.mesh.n_elements, -1) ** 2, axis=1) * field_.mesh.areas
    hole_energy = float(sq[hole].sum())
    annulus = _annulus_energy(field_, full_mesh)
    ratio = hole_energy / annulus if annulus > 0 else (0.0 if hole_energy == 0 else math.inf)
    ext.info = {"hole_energy": hole_energy, "annulus_energy": annulus, "ratio": ratio,
                "material_energy": float(mat_sq.sum())}
    return ext, ratio


def _annulus_energy(field_: FieldOnMesh, full_mesh: TriMesh) -> float:
    """Energy of the field in the cell material around interior holes (whole perforated cell)."""
    g = field_.gradient()
    return float(np.dot(field_.mesh.areas, np.sum(g.reshape(len(g), -1) ** 2, axis=1)))


def weighted_extension_ratio(field_: FieldOnMesh, ext: FieldOnMesh, layer: LayerGeometry,
                             beta: float, degree: int = 2) -> float:
    """``int |grad ext|^2 delta^beta / int |grad field|^2 delta^beta`` (outside the square both vanish)."""
    def weighted(fm: FieldOnMesh):
        bq, wq = triangle_rule(degree)
        p = fm.mesh.nodes[fm.mesh.elements]
        g = fm.gradient()
        sq = np.sum(g.reshape(len(g), -1) ** 2, axis=1)
        tot = 0.0
        for q in range(len(wq)):
            x = np.einsum("a,ead->ed", bq[q], p)
            tot += wq[q] * np.dot(fm.mesh.areas * sq, layer.delta(x) ** beta)
        return tot
    den = weighted(field_)
    return weighted(ext) / den if den > 0 else math.nan


# ---------------------------------------------------------------------------
# error functionals

def lp_exponent(tau: float, d: int = 2) -> float:
    """``p = 2d/(d - 1 - tau)``."""
    if not (0.0 <= tau < 1.0):
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    return 2.0 * d / (d - 1.0 - tau)


@dataclass
class ErrorReport:
    epsilon: float
    h: float
    h1_w: float
    l2_err: float
    lp_err_tau: float
    sqfn: float
    normalizer_g: float
    normalizer_F: float
    normalizer_gradF: float
    theta: float
    tau: float = 0.5
    p: float = 8.0
    l4_err: float = 0.0
    h1_diff: float = 0.0
    h1_w_layer: float = 0.0
    h1_w_colayer: float = 0.0
    sqfn_bound: float = 0.0

    CSV_COLUMNS = ("epsilon", "h", "h1_w", "l2_err", "lp_err_tau", "sqfn",
                   "normalizer_g", "normalizer_F", "normalizer_gradF", "theta")

    def as_dict(self) -> dict:
        return asdict(self)


def error_report(tsc: TwoScaleCorrector, domain: MacroDomain, data, tau: float,
                 h: float, theta: float, layer: LayerGeometry | None = None,
                 degree: int = 5) -> ErrorReport:
    """Every error functional by element quadrature on the perforated mesh."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    p = lp_exponent(tau)
    layer = layer or LayerGeometry(domain)
    q = tsc.fields_at_quadrature(degree)
    w = q["weights"]
    x = q["x"]
    gw2 = np.sum(q["grad_w"] ** 2, axis=(1, 2))
    gd2 = np.sum(q["grad_diff"] ** 2, axis=(1, 2))
    dn = np.sqrt(np.sum(q["diff"] ** 2, axis=1))
    delta = layer.delta(x)
    in_layer = layer.in_layer(x, 4.0)
    h1_w = math.sqrt(np.dot(w, gw2))
    sqfn = math.sqrt(np.dot(w, gw2 * delta))
    return ErrorReport(
        epsilon=domain.epsilon, h=h,
        h1_w=h1_w,
        l2_err=math.sqrt(np.dot(w, dn**2)),
        lp_err_tau=float(np.dot(w, dn**p) ** (1.0 / p)),
        sqfn=sqfn,
        normalizer_g=data.g_h1_boundary() if data.g else 0.0,
        normalizer_F=data.F_l2_extended(layer.extended_offset) if data.F else 0.0,
        normalizer_gradF=data.gradF_weighted(layer) if data.F else 0.0,
        theta=theta, tau=tau, p=p,
        l4_err=float(np.dot(w, dn**4) ** 0.25),
        h1_diff=math.sqrt(np.dot(w, gd2)),
        h1_w_layer=math.sqrt(np.dot(w, gw2 * in_layer)),
        h1_w_colayer=math.sqrt(np.dot(w, gw2 * ~in_layer)),
        sqfn_bound=math.sqrt(float(delta.max())) * h1_w,
    )


# ---------------------------------------------------------------------------
# quenched norms

class BallAverager:
    """Averages over ``B_eps(x)`` of piecewise-constant data, for ``x`` on a grid of spacing ``eps/4``.

    Elements enter a ball when their centroid does.
    """

    def __init__(self, mesh: TriMesh, eps: float, spacing: float | None = None):
        s = spacing or eps / 4.0
        k = int(round(1.0 / s))
        t = (np.arange(k) + 0.5) / k
        X, Y = np.meshgrid(t, t, indexing="ij")
        self.points = np.column_stack([X.ravel(), Y.ravel()])
        self.cell_area = 1.0 / k**2
        tree = cKDTree(mesh.centroids)
        lists = tree.query_ball_point(self.points, r=eps)
        counts = np.array([len(lst) for lst in lists])
        if np.any(counts == 0):
            raise AssertionError("a ball around a sample point misses the perforated domain")
        cols = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in lists])
        rows = np.repeat(np.arange(len(lists)), counts)
        M = sp.csr_matrix((mesh.areas[cols], (rows, cols)), shape=(len(lists), mesh.n_elements))
        self.M = M
        self.ball_area = np.asarray(M.sum(axis=1)).ravel()

    def average(self, sq: np.ndarray) -> np.ndarray:
        return (self.M @ sq) / self.ball_area


def quenched_norm(values: np.ndarray, p: float, weight=None, averager: BallAverager | None = None,
                  mesh: TriMesh | None = None, eps: float | None = None) -> float:
    """``(int (avg_{B_eps(x)} |v|^2)^{p/2} rho dx)^{1/p}`` for per-element data ``values``."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    if averager is None:
        averager = BallAverager(mesh, eps)
    v = np.asarray(values, dtype=float)
    sq = np.sum(v.reshape(len(v), -1) ** 2, axis=1)
    avg = averager.average(sq)
    rho = np.ones(len(avg)) if weight is None else weight(averager.points)
    return float((averager.cell_area * np.dot(avg ** (p / 2.0), rho)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# smoothing-operator probes

_NO_HOLE = PerforationSpec(hole_shape="none")

def _grid_rule(lo: float, hi: float, size: float, n_gauss: int = 3):
    """Tensor Gauss rule on square cells of side ``size`` tiling ``[lo, hi]^2``."""
    k = max(1, int(round((hi - lo) / size)))
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    edges = np.linspace(lo, hi, k + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * t).ravel()
    wts = (half[:, None] * w).ravel()
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wts, wts).ravel()


def _F_probe(x):
    return np.stack([np.cos(2 * np.pi * x[..., 0]), np.sin(2 * np.pi * x[..., 1])], axis=-1)


def _gradF_probe(x):
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = -2 * np.pi * np.sin(2 * np.pi * x[..., 0])
    out[..., 1, 1] = 2 * np.pi * np.cos(2 * np.pi * x[..., 1])
    return out


def _sq(v):
    v = np.asarray(v)
    return np.sum(v.reshape(len(v), -1) ** 2, axis=1)


def smoothing_ratios(eps: float, kernel: SmoothingKernel | None = None, n_gauss: int = 3) -> dict:
    """Measured constants of the four smoothing inequalities at one ``eps``.

    ``varpi(y) = sin(2 pi y_1)`` is the oscillating factor, ``F = (cos 2 pi x_1, sin 2 pi x_2)``
    the macroscopic field. Keys: ``constant`` (max defect of S(1) - 1), ``oscillating``,
    ``difference``, ``weighted_plus``, ``weighted_minus``, ``weighted_difference``; the
    colayer probes are NaN when ``Sigma_{2 eps}`` is empty.
    """
    kernel = kernel or SmoothingKernel()
    cell = eps / 4.0
    domain = MacroDomain(n=int(round(1 / eps)), perforation=_NO_HOLE)
    layer = LayerGeometry(domain)
    varpi = lambda x: np.sin(2 * np.pi * to_cell_coords(x, eps)[..., 0])  # noqa: E731
    varpi_l2 = math.sqrt(0.5)
    out = {}

    x_in, w_in = _grid_rule(0.0, 1.0, cell, n_gauss)
    inside = lambda x: np.all((x >= 0) & (x <= 1), axis=-1)  # noqa: E731
    out["constant"] = float(np.abs(smooth(lambda x: np.ones(len(x)), eps, x_in[:50], kernel) - 1).max())

    # ||varpi(x/eps) S(f)||_{L^2(R^2)} <= C ||varpi||_{L^2(Y)} ||f||_{L^2}, f = F 1_Omega
    f_sq = lambda x: _F_probe(x) * inside(x)[:, None]  # noqa: E731
    x_ex, w_ex = _grid_rule(-eps / 2, 1 + eps / 2, cell, n_gauss)
    S = smooth(f_sq, eps, x_ex, kernel)
    lhs = math.sqrt(np.dot(w_ex, _sq(S) * varpi(x_ex) ** 2))
    out["oscillating"] = lhs / (varpi_l2 * math.sqrt(np.dot(w_in, _sq(_F_probe(x_in)))))

    # ||S(f) - f||_{L^2} <= C eps ||grad f||_{L^2}, f = sin(2 pi x_1)
    f1 = lambda x: np.sin(2 * np.pi * x[..., 0])  # noqa: E731
    diff = smooth(f1, eps, x_in, kernel) - f1(x_in)
    grad_l2 = math.sqrt(np.dot(w_in, (2 * np.pi * np.cos(2 * np.pi * x_in[:, 0])) ** 2))
    out["difference"] = math.sqrt(np.dot(w_in, diff**2)) / (eps * grad_l2)

    a = 2 * eps
    if a >= 0.5:
        out.update(weighted_plus=math.nan, weighted_minus=math.nan, weighted_difference=math.nan)
        return out
    # weighted oscillating bound on Sigma_{2 eps} for f = F 1_{Sigma_{2 eps}}
    x_s, w_s = _grid_rule(a, 1 - a, cell, n_gauss)
    in_s = lambda x: np.all((x >= a) & (x <= 1 - a), axis=-1)  # noqa: E731
    S = smooth(lambda x: _F_probe(x) * in_s(x)[:, None], eps, x_s, kernel)
    d = layer.delta(x_s)
    fs = _sq(_F_probe(x_s))
    for key, sgn in (("weighted_plus", 1.0), ("weighted_minus", -1.0)):
        lhs = math.sqrt(np.dot(w_s, _sq(S) * varpi(x_s) ** 2 * d**sgn))
        out[key] = lhs / (varpi_l2 * math.sqrt(np.dot(w_s, fs * d**sgn)))

    # weighted difference bound for f = F psi, psi ramping on (eps, 2 eps)
    psi = CutOff(eps, 2 * eps)
    fpsi = lambda x: _F_probe(x) * psi(x)[..., None]  # noqa: E731
    diff = smooth(fpsi, eps, x_s, kernel) - fpsi(x_s)
    lhs = math.sqrt(np.dot(w_s, _sq(diff) * d))
    x_c, w_c = _grid_rule(eps, 1 - eps, cell, n_gauss)
    gf = _gradF_probe(x_c) * psi(x_c)[:, None, None] + np.einsum("ni,nk->nik", _F_probe(x_c), psi.gradient(x_c))
    rhs = eps * math.sqrt(np.dot(w_c, _sq(gf) * layer.delta(x_c)))
    out["weighted_difference"] = lhs / rhs
    return out
