"""Macroscopic solves: oscillating problem on the perforated square, homogenized
problem on the full square, and divergence-data problems."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField
from .fem import (Constraints, FieldOnMesh, LinearSolver, assemble_elasticity, element_coefficients,
                  load_divergence, load_volume, triangle_rule)
from .geometry import LayerGeometry, MacroDomain
from .mesh import TriMesh, mesh_macro, structured_square_mesh, tag_square_boundary

__all__ = [
    "ProblemData",
    "data_preset",
    "f_preset",
    "solve_eps_problem",
    "solve_homogenized",
    "solve_divdata_problem",
    "macro_mesh",
    "element_average",
]

PI = np.pi
G_LINEAR = np.array([[1.0, 0.5], [0.25, -1.0]])


# ---------------------------------------------------------------------------
# data presets

def _F_default(x):
    return np.stack([np.cos(2 * PI * x[..., 0]), np.sin(2 * PI * x[..., 1])], axis=-1)


def _gradF_default(x):
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = -2 * PI * np.sin(2 * PI * x[..., 0])
    out[..., 1, 1] = 2 * PI * np.cos(2 * PI * x[..., 1])
    return out


def _g_default(x):
    return np.stack([np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1]), x[..., 0] * x[..., 1]], axis=-1)


def _gradg_default(x):
    s1, s2 = np.sin(PI * x[..., 0]), np.sin(PI * x[..., 1])
    c1, c2 = np.cos(PI * x[..., 0]), np.cos(PI * x[..., 1])
    out = np.empty(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = PI * c1 * s2
    out[..., 0, 1] = PI * s1 * c2
    out[..., 1, 0] = x[..., 1]
    out[..., 1, 1] = x[..., 0]
    return out


def _g_linear(x):
    return x @ G_LINEAR.T


def _gradg_linear(x):
    return np.broadcast_to(G_LINEAR, x.shape[:-1] + (2, 2))


_F_PRESETS = {"default": (_F_default, _gradF_default)}
_G_PRESETS = {"default": (_g_default, _gradg_default), "linear": (_g_linear, _gradg_linear)}


def f_preset(name: str, seed: int = 0):
    """Matrix-valued divergence data ``f(x)`` of shape (..., 2, 2)."""
    if name == "diagonal":
        def f(x):
            out = np.zeros(x.shape[:-1] + (2, 2))
            out[..., 0, 0] = np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])
            out[..., 1, 1] = np.cos(PI * x[..., 0]) * np.cos(PI * x[..., 1])
            return out
    elif name == "trig":
        def f(x):
            a, b = 2 * PI * x[..., 0], 2 * PI * x[..., 1]
            return np.stack([np.stack([np.cos(b), np.sin(a)], -1),
                             np.stack([np.sin(a), np.cos(b)], -1)], -2)
    elif name == "random_trig":
        rng = np.random.default_rng(seed)
        amp = rng.normal(size=(3, 2, 2))
        kx = rng.integers(1, 4, size=(3, 2, 2))
        ky = rng.integers(1, 4, size=(3, 2, 2))
        ph = rng.uniform(0, 2 * PI, size=(3, 2, 2))

        def f(x):
            t = (PI * (x[..., 0, None, None, None] * kx + x[..., 1, None, None, None] * ky) + ph)
            return np.sum(amp * np.sin(t), axis=-3)
    elif name == "rough":
        rng = np.random.default_rng(seed + 1)
        vals = rng.uniform(-1, 1, size=(4, 4, 2, 2))

        def f(x):
            i = np.clip(np.floor(x[..., 0] * 4).astype(int), 0, 3)
            j = np.clip(np.floor(x[..., 1] * 4).astype(int), 0, 3)
            return vals[i, j]
    elif name == "zero":
        def f(x):
            return np.zeros(x.shape[:-1] + (2, 2))
    elif name == "constant":
        def f(x):
            return np.broadcast_to(np.array([[1.0, 0.3], [0.3, -0.5]]), x.shape[:-1] + (2, 2)).copy()
    else:
        raise ValueError(f"unknown f preset {name!r}")
    f.preset = name
    return f


@dataclass(frozen=True)
class ProblemData:
    """Source ``F``, Dirichlet datum ``g`` and divergence datum ``f``; ``None`` disables one."""

    F: str | None = "default"
    g: str | None = "default"
    f: str | None = None
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.F is not None and self.F not in _F_PRESETS:
            raise ValueError(f"unknown F preset {self.F!r}")
        if self.g is not None and self.g not in _G_PRESETS:
            raise ValueError(f"unknown g preset {self.g!r}")

    def F_fn(self, x):
        if self.F is None:
            return np.zeros(np.shape(x))
        return self.scale * _F_PRESETS[self.F][0](x)

    def gradF(self, x):
        x = np.asarray(x, dtype=float)
        if self.F is None:
            return np.zeros(x.shape[:-1] + (2, 2))
        return self.scale * _F_PRESETS[self.F][1](x)

    def g_fn(self, x):
        x = np.asarray(x, dtype=float)
        if self.g is None:
            return np.zeros(x.shape)
        return self.scale * _G_PRESETS[self.g][0](x)

    def grad_g(self, x):
        x = np.asarray(x, dtype=float)
        if self.g is None:
            return np.zeros(x.shape[:-1] + (2, 2))
        return self.scale * np.asarray(_G_PRESETS[self.g][1](x))

    def f_fn(self, x):
        x = np.asarray(x, dtype=float)
        if self.f is None:
            return np.zeros(x.shape[:-1] + (2, 2))
        return self.scale * f_preset(self.f, self.seed)(x)

    # -- data norms by high-order quadrature of the analytic presets

    def g_h1_boundary(self, n_gauss: int = 40) -> float:
        """``||g||_{H^1(boundary)}`` with the tangential derivative."""
        t, w = np.polynomial.legendre.leggauss(n_gauss)
        s = 0.5 * (t + 1)
        w = 0.5 * w
        total = 0.0
        for p0, d in [((0, 0), (1, 0)), ((1, 0), (0, 1)), ((1, 1), (-1, 0)), ((0, 1), (0, -1))]:
            x = np.asarray(p0, float) + s[:, None] * np.asarray(d, float)
            gv = self.g_fn(x)
            dt = np.einsum("nij,j->ni", self.grad_g(x), np.asarray(d, float))
            total += np.dot(w, np.sum(gv**2, axis=1) + np.sum(dt**2, axis=1))
        return float(np.sqrt(total))

    def F_l2_extended(self, offset: float, n_gauss: int = 24, n_sub: int = 8) -> float:
        """``||F||_{L^2(Omega_0)}`` on the square dilated by ``offset``."""
        x, w = _square_rule(-offset, 1 + offset, n_gauss, n_sub)
        return float(np.sqrt(np.dot(w, np.sum(self.F_fn(x) ** 2, axis=1))))

    def gradF_weighted(self, layer: LayerGeometry, n_gauss: int = 24, n_sub: int = 8) -> float:
        """``(int_{Omega_0} |grad F|^2 delta)^{1/2}``."""
        o = layer.extended_offset
        x, w = _square_rule(-o, 1 + o, n_gauss, n_sub)
        return float(np.sqrt(np.dot(w, np.sum(self.gradF(x) ** 2, axis=(1, 2)) * layer.delta(x))))

    def as_dict(self) -> dict:
        return {"F": self.F, "g": self.g, "f": self.f, "scale": self.scale, "seed": self.seed}


def _square_rule(lo: float, hi: float, n_gauss: int, n_sub: int):
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    edges = np.linspace(lo, hi, n_sub + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * t).ravel()
    wts = (half[:, None] * w).ravel()
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    W = np.outer(wts, wts)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def data_preset(name: str, scale: float = 1.0, seed: int = 0) -> ProblemData:
    """``boundary`` (F = 0), ``full``, ``source`` (g = 0), ``linear`` (g = Mx, F = 0)."""
    table = {
        "boundary": dict(F=None, g="default"),
        "full": dict(F="default", g="default"),
        "source": dict(F="default", g=None),
        "linear": dict(F=None, g="linear"),
        "none": dict(F=None, g=None),
    }
    if name not in table:
        raise ValueError(f"unknown data preset {name!r}")
    return ProblemData(scale=scale, seed=seed, **table[name])


# ---------------------------------------------------------------------------
# solves with cached factorizations

_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 6


def _cached(key, build):
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    val = build()
    _CACHE[key] = val
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return val


def clear_cache() -> None:
    _CACHE.clear()


def macro_mesh(domain: MacroDomain, h: float) -> TriMesh:
    return _cached(("mesh", _dkey(domain), float(h)), lambda: mesh_macro(domain, h))


def _dkey(domain: MacroDomain):
    d = domain.as_dict()
    return tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in d.items()))


def _ckey(coeff: CoefficientField):
    return tuple(sorted(coeff.as_dict().items()))


def _operator(mesh_key, mesh: TriMesh, C, method: str, dirichlet: np.ndarray, coeff_key):
    def build():
        K = assemble_elasticity(mesh, C)
        return K, LinearSolver(K, Constraints(2, dirichlet_nodes=dirichlet), mesh.n_nodes, method)
    return _cached(("op", mesh_key, coeff_key, method), build)


def element_average(mesh: TriMesh, fn, degree: int = 2) -> np.ndarray:
    """Element means of a callable by a triangle rule."""
    pts, w = triangle_rule(degree)
    p = mesh.nodes[mesh.elements]
    acc = 0.0
    for q in range(len(w)):
        acc = acc + w[q] * np.asarray(fn(np.einsum("a,ead->ed", pts[q], p)))
    return acc


def _solve_dirichlet(mesh, mesh_key, C, coeff_key, b, gfun, method):
    bn = mesh.boundary_nodes("dirichlet_outer")
    K, solver = _operator(mesh_key, mesh, C, method, bn, coeff_key)
    gvals = gfun(mesh.nodes[bn]) if gfun is not None else np.zeros((len(bn), 2))
    solver.red.g[:] = 0.0
    dd = (2 * bn[:, None] + np.arange(2)).ravel()
    solver.red.g[dd] = np.asarray(gvals, dtype=float).ravel()
    u, info = solver.solve(b)
    return FieldOnMesh(mesh, u.reshape(-1, 2), info)


def solve_eps_problem(domain: MacroDomain, coeff: CoefficientField, data: ProblemData, h: float,
                      method: str = "direct") -> FieldOnMesh:
    """``-div(A(x/eps) grad u) = F`` in the perforated square, ``u = g`` outside, traction free on holes."""
    mesh = macro_mesh(domain, h)
    C = element_coefficients(mesh, coeff, eps=domain.epsilon)
    b = np.zeros(2 * mesh.n_nodes)
    if data.F is not None:
        b += load_volume(mesh, data.F_fn, 2)
    if data.f is not None:
        b += load_divergence(mesh, element_average(mesh, data.f_fn))
    mkey = ("macro", _dkey(domain), float(h))
    return _solve_dirichlet(mesh, mkey, C, _ckey(coeff), b, data.g_fn if data.g else None, method)


def homogenized_mesh(h: float) -> TriMesh:
    m = int(round(1.0 / h))
    if abs(m * h - 1.0) > 1e-9:
        raise ValueError(f"h = {h} does not divide the unit square")
    mesh = _cached(("hmesh", m), lambda: structured_square_mesh(m))
    if not mesh.boundary_tags:
        tag_square_boundary(mesh)
    return mesh


def solve_homogenized(A_hat, data: ProblemData, h: float, method: str = "direct") -> FieldOnMesh:
    """``-div(A_hat grad u0) = F`` on the unperforated square with ``u0 = g``."""
    entries = A_hat.entries if hasattr(A_hat, "entries") else np.asarray(A_hat)
    mesh = homogenized_mesh(h)
    b = np.zeros(2 * mesh.n_nodes)
    if data.F is not None:
        b += load_volume(mesh, data.F_fn, 2)
    if data.f is not None:
        b += load_divergence(mesh, element_average(mesh, data.f_fn))
    ckey = ("A_hat", entries.tobytes())
    return _solve_dirichlet(mesh, ("hom", mesh.n_nodes), entries, ckey, b,
                            data.g_fn if data.g else None, method)


def solve_divdata_problem(domain: MacroDomain, coeff: CoefficientField, f, h: float,
                          method: str = "direct") -> FieldOnMesh:
    """``-div(A(x/eps) grad phi) = div f`` with load ``-int f : grad v``, ``phi = 0`` on the outer boundary.

    ``f`` is a callable (..., 2) -> (..., 2, 2) or per-element array (ne, 2, 2).
    """
    mesh = macro_mesh(domain, h)
    fe = f if isinstance(f, np.ndarray) else element_average(mesh, f)
    C = element_coefficients(mesh, coeff, eps=domain.epsilon)
    b = load_divergence(mesh, fe)
    mkey = ("macro", _dkey(domain), float(h))
    out = _solve_dirichlet(mesh, mkey, C, _ckey(coeff), b, None, method)
    out.info["f_elements"] = fe
    return out
