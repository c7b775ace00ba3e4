"""P1 finite elements: fields, assembly, constraint elimination and linear solves.

Vector unknowns are interleaved, dof ``2*node + component``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import kernels
from .coefficients import CoefficientError, check_symmetries
from .mesh import TriMesh

__all__ = [
    "SolverError",
    "SingularSystemError",
    "FieldOnMesh",
    "Locator",
    "locator",
    "triangle_rule",
    "element_coefficients",
    "assemble_elasticity",
    "assemble_laplace",
    "load_volume",
    "load_divergence",
    "nodal_weights",
    "Constraints",
    "SparseSystem",
    "LinearSolver",
    "assemble",
    "solve_system",
]

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual target."""


class SingularSystemError(SolverError):
    """No constraint removes the kernel of the operator."""


# ---------------------------------------------------------------------------
# quadrature

_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
}


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    w0, w1, w2 = 0.225, 0.132394152788506, 0.125939180544827
    pts = [[1 / 3, 1 / 3, 1 / 3],
           [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
           [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]]
    return np.array(pts), np.array([w0, w1, w1, w1, w2, w2, w2])


_RULES[5] = _dunavant5()


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights (summing to 1) exact to ``degree``."""
    for d in sorted(_RULES):
        if d >= degree:
            return _RULES[d]
    raise ValueError(f"no triangle rule of degree {degree}")


# ---------------------------------------------------------------------------
# point location

class Locator:
    """Bucket grid over element bounding boxes, with a nearest-centroid fallback."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        p = mesh.nodes[mesh.elements]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        glo = mesh.nodes.min(axis=0)
        ghi = mesh.nodes.max(axis=0)
        cell = 2.0 * np.sqrt(mesh.areas.mean())
        shape = np.maximum(np.ceil((ghi - glo) / cell).astype(np.int64), 1)
        inv = shape / np.maximum(ghi - glo, 1e-300)
        i0 = np.clip(np.floor((lo - glo) * inv).astype(np.int64), 0, shape - 1)
        i1 = np.clip(np.floor((hi - glo) * inv).astype(np.int64), 0, shape - 1)
        nx = i1[:, 0] - i0[:, 0] + 1
        ny = i1[:, 1] - i0[:, 1] + 1
        cnt = nx * ny
        eid = np.repeat(np.arange(mesh.n_elements), cnt)
        off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        bx = i0[eid, 0] + off // ny[eid]
        by = i0[eid, 1] + off % ny[eid]
        bucket = bx * shape[1] + by
        order = np.lexsort((eid, bucket))
        self.items = np.ascontiguousarray(eid[order], dtype=np.int64)
        counts = np.bincount(bucket, minlength=int(shape[0] * shape[1]))
        self.start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.lo = glo.astype(float)
        self.inv = inv.astype(float)
        self.shape = shape
        self._tree = None

    def locate(self, points: np.ndarray, tol: float = 1e-10):
        """Containing element and barycentrics; ``elem = -1`` where outside the mesh."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 2))
        m = self.mesh
        if getattr(m, "structured", None) is not None:
            return _locate_structured(m, pts, tol)
        return kernels.locate_points(m.nodes, m.elements, self.start, self.items, self.lo,
                                     self.inv, self.shape, pts, tol)

    def nearest(self, points: np.ndarray):
        """Nearest element by centroid and the (extrapolating) barycentrics there."""
        if self._tree is None:
            self._tree = cKDTree(self.mesh.centroids)
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        _, e = self._tree.query(pts)
        return e.astype(np.int64), barycentric(self.mesh, e, pts)


def barycentric(mesh: TriMesh, elem: np.ndarray, points: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.elements[elem]]
    g = mesh.basis_gradients[elem]
    r = points - p[:, 0]
    l12 = np.einsum("nkd,nd->nk", g[:, 1:], r)
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def _locate_structured(mesh: TriMesh, pts: np.ndarray, tol: float):
    m, lo, size = mesh.structured
    s = (pts - lo) / size * m
    q = np.floor(s).astype(np.int64)
    inside = np.all((s >= -tol * m) & (s <= m * (1 + tol)), axis=1)
    q = np.clip(q, 0, m - 1)
    f = s - q
    upper = f[:, 1] > f[:, 0]
    elem = 2 * (q[:, 1] * m + q[:, 0]) + upper
    bary = barycentric(mesh, elem, pts)
    elem = np.where(inside, elem, -1)
    return elem, bary


def locator(mesh: TriMesh) -> Locator:
    """Locator cached on the mesh."""
    loc = getattr(mesh, "_locator", None)
    if loc is None:
        loc = Locator(mesh)
        mesh._locator = loc
    return loc


# ---------------------------------------------------------------------------
# fields

@dataclass
class FieldOnMesh:
    """Piecewise-linear scalar or vector field given by nodal values."""

    mesh: TriMesh
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_nodes:
            raise ValueError("one value per node expected")

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def gradient(self) -> np.ndarray:
        """Per-element gradient: (ne, 2) for scalars, (ne, c, 2) for vectors."""
        g = self.mesh.basis_gradients
        v = self.values[self.mesh.elements]
        if self.values.ndim == 1:
            return np.einsum("ea,eak->ek", v, g)
        return np.einsum("eac,eak->eck", v, g)

    def at(self, elem: np.ndarray, bary: np.ndarray) -> np.ndarray:
        v = self.values[self.mesh.elements[elem]]
        if self.values.ndim == 1:
            return np.einsum("na,na->n", v, bary)
        return np.einsum("nac,na->nc", v, bary)

    def evaluate(self, points: np.ndarray, outside: str = "nan") -> np.ndarray:
        """Barycentric interpolation; ``outside`` is ``nan``, ``zero``, ``nearest`` or ``raise``."""
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        loc = locator(self.mesh)
        elem, bary = loc.locate(flat)
        miss = elem < 0
        if miss.any():
            if outside == "raise":
                raise ValueError(f"{int(miss.sum())} points outside the mesh")
            if outside == "nearest":
                e2, b2 = loc.nearest(flat[miss])
                elem[miss], bary[miss] = e2, b2
        out = self.at(np.maximum(elem, 0), bary)
        if miss.any() and outside in ("nan", "zero"):
            out[miss] = np.nan if outside == "nan" else 0.0
        return out.reshape(pts.shape[:-1] + out.shape[1:])

    def integral(self) -> np.ndarray:
        v = self.values[self.mesh.elements].mean(axis=1)
        return np.einsum("e,e...->...", self.mesh.areas, v)

    def mean(self) -> np.ndarray:
        return self.integral() / self.mesh.area

    def l2_norm(self) -> float:
        pts, w = triangle_rule(2)
        v = self.values[self.mesh.elements]
        tot = 0.0
        for q in range(len(w)):
            val = np.einsum("ea...,a->e...", v, pts[q])
            sq = val**2 if val.ndim == 1 else np.sum(val**2, axis=1)
            tot += w[q] * np.dot(self.mesh.areas, sq)
        return float(np.sqrt(tot))

    def h1_seminorm(self) -> float:
        g = self.gradient()
        sq = np.sum(g.reshape(len(g), -1) ** 2, axis=1)
        return float(np.sqrt(np.dot(self.mesh.areas, sq)))


# ---------------------------------------------------------------------------
# assembly

def element_coefficients(mesh: TriMesh, coeff, eps: float | None = None) -> np.ndarray:
    """Tensor at element centroids; ``eps`` maps macro points to cell coordinates."""
    from .geometry import to_cell_coords

    y = mesh.centroids
    if eps is not None:
        y = to_cell_coords(y, eps)
    return coeff.tensor(y)


def _dof_pattern(elements: np.ndarray, ncomp: int):
    dofs = (ncomp * elements[:, :, None] + np.arange(ncomp)).reshape(len(elements), -1)
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    return dofs, rows, cols


def assemble_elasticity(mesh: TriMesh, C: np.ndarray, elements: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness of ``int C du : dv`` with one constant tensor per element.

    ``C`` has shape (ne, 2, 2, 2, 2) or (2, 2, 2, 2); ``elements`` selects a subset.
    """
    C = np.asarray(C, dtype=float)
    sel = slice(None) if elements is None else elements
    ne = mesh.n_elements
    if C.ndim == 4:
        C = np.broadcast_to(C, (ne, 2, 2, 2, 2))
    C = np.ascontiguousarray(C[sel])
    asym = check_symmetries(C) if len(C) else 0.0
    if asym > 1e-12:
        raise CoefficientError(f"coefficient violates the elasticity symmetries (defect {asym:.2e})")
    ke = kernels.p1_elasticity(np.ascontiguousarray(mesh.basis_gradients[sel]),
                               np.ascontiguousarray(mesh.areas[sel]), C)
    _, rows, cols = _dof_pattern(mesh.elements[sel], 2)
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((np.asarray(ke).ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble_laplace(mesh: TriMesh, elements: np.ndarray | None = None, kappa=None) -> sp.csr_matrix:
    """Scalar stiffness ``int kappa grad u . grad v`` (kappa per element, default 1)."""
    sel = slice(None) if elements is None else elements
    g = mesh.basis_gradients[sel]
    a = mesh.areas[sel]
    if kappa is not None:
        a = a * np.asarray(kappa)[sel]
    ke = np.einsum("e,eak,ebk->eab", a, g, g)
    _, rows, cols = _dof_pattern(mesh.elements[sel], 1)
    n = mesh.n_nodes
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def nodal_weights(mesh: TriMesh, elements: np.ndarray | None = None) -> np.ndarray:
    """``int phi_i`` over the selected elements."""
    sel = slice(None) if elements is None else elements
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.elements[sel].ravel(), np.repeat(mesh.areas[sel] / 3.0, 3))
    return w


def load_volume(mesh: TriMesh, F, ncomp: int = 2, elements: np.ndarray | None = None,
                degree: int = 5) -> np.ndarray:
    """``int F phi`` for a callable ``F(x)`` returning (n, ncomp) (or (n,) for scalars)."""
    idx = np.arange(mesh.n_elements) if elements is None else np.flatnonzero(
        np.isin(np.arange(mesh.n_elements), elements) if np.asarray(elements).dtype != bool else elements)
    pts, w = triangle_rule(degree)
    p = mesh.nodes[mesh.elements[idx]]
    b = np.zeros((mesh.n_nodes, ncomp))
    for q in range(len(w)):
        x = np.einsum("a,ead->ed", pts[q], p)
        val = np.asarray(F(x), dtype=float).reshape(len(idx), ncomp)
        contrib = w[q] * mesh.areas[idx, None, None] * pts[q][None, :, None] * val[:, None, :]
        np.add.at(b, mesh.elements[idx].ravel(), contrib.reshape(-1, ncomp))
    return b.ravel() if ncomp > 1 else b[:, 0]


def load_divergence(mesh: TriMesh, f: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
    """``-int f : grad phi`` for piecewise-constant ``f`` of shape (ne, c, 2) or (ne, 2)."""
    sel = slice(None) if elements is None else elements
    f = np.asarray(f, dtype=float)
    scalar = f.ndim == 2
    if scalar:
        f = f[:, None, :]
    f = f[sel]
    g = mesh.basis_gradients[sel]
    contrib = -np.einsum("e,eck,eak->eac", mesh.areas[sel], f, g)
    ncomp = f.shape[1]
    b = np.zeros((mesh.n_nodes, ncomp))
    np.add.at(b, mesh.elements[sel].ravel(), contrib.reshape(-1, ncomp))
    return b[:, 0] if scalar else b.ravel()


# ---------------------------------------------------------------------------
# constraints and systems

@dataclass
class Constraints:
    """Dirichlet values, periodic identifications and mean-zero rows.

    ``periodic_pairs`` maps slave nodes to master nodes; ``mean_weights`` are
    the nodal weights of the mean-zero functional (one row per component).
    """

    ncomp: int = 2
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray | None = None
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    mean_weights: np.ndarray | None = None

    @property
    def mean_zero(self) -> bool:
        return self.mean_weights is not None


class Reduction:
    """Map ``u = P x + g`` from free dofs ``x`` to all dofs."""

    def __init__(self, n_nodes: int, con: Constraints):
        c = con.ncomp
        master = np.arange(n_nodes)
        pairs = np.asarray(con.periodic_pairs, dtype=np.int64).reshape(-1, 2)
        master[pairs[:, 0]] = pairs[:, 1]
        N = c * n_nodes
        dir_nodes = np.asarray(con.dirichlet_nodes, dtype=np.int64)
        fixed = np.zeros(N, dtype=bool)
        g = np.zeros(N)
        if len(dir_nodes):
            dd = (c * dir_nodes[:, None] + np.arange(c)).ravel()
            fixed[dd] = True
            vals = np.zeros((len(dir_nodes), c)) if con.dirichlet_values is None else \
                np.asarray(con.dirichlet_values, dtype=float).reshape(len(dir_nodes), c)
            g[dd] = vals.ravel()
        mdof = (c * master[:, None] + np.arange(c)).ravel()
        free_master = np.flatnonzero((mdof == np.arange(N)) & ~fixed)
        index = -np.ones(N, dtype=np.int64)
        index[free_master] = np.arange(len(free_master))
        col = index[mdof]
        col[fixed] = -1
        rows = np.flatnonzero(col >= 0)
        self.P = sp.csr_matrix((np.ones(len(rows)), (rows, col[rows])), shape=(N, len(free_master)))
        self.g = g
        self.fixed = fixed
        self.n_free = len(free_master)
        self.ncomp = c


@dataclass
class SparseSystem:
    mesh: TriMesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: Constraints

    def symmetry_defect(self) -> float:
        K = self.matrix
        d = abs(K - K.T).max() if K.nnz else 0.0
        return float(d / max(abs(K).max(), 1e-300))


def assemble(mesh: TriMesh, coeff=None, source=None, *, eps: float | None = None,
             constraints: Constraints | None = None, elements: np.ndarray | None = None,
             ncomp: int = 2) -> SparseSystem:
    """Elasticity (or scalar Laplace when ``coeff`` is None and ``ncomp == 1``) system.

    ``source`` is a dict with optional ``F`` (callable) and ``f`` (per-element array).
    """
    if coeff is None and ncomp == 1:
        K = assemble_laplace(mesh, elements)
    else:
        C = coeff if isinstance(coeff, np.ndarray) else element_coefficients(mesh, coeff, eps)
        K = assemble_elasticity(mesh, C, elements)
    b = np.zeros(K.shape[0])
    source = source or {}
    if source.get("F") is not None:
        b += load_volume(mesh, source["F"], ncomp, elements)
    if source.get("f") is not None:
        b += load_divergence(mesh, source["f"], elements)
    con = constraints if constraints is not None else Constraints(ncomp=ncomp)
    return SparseSystem(mesh, K, b, con)


class LinearSolver:
    """Constrained solver for one matrix, reusable across right-hand sides.

    Mean-zero rows enter as Lagrange multipliers. The bordered system is solved
    by block elimination: the multipliers follow from the compatibility of the
    singular block, which is then solved with one pinned dof per component and
    projected onto the mean-zero space.
    """

    def __init__(self, K: sp.spmatrix, con: Constraints, n_nodes: int, method: str = "direct",
                 maxiter: int | None = None):
        if method not in ("direct", "cg_jacobi"):
            raise ValueError(f"unknown method {method!r}")
        if len(con.dirichlet_nodes) == 0 and not con.mean_zero:
            raise SingularSystemError("no Dirichlet set and no mean-zero constraint: the system is singular")
        self.method = method
        self.con = con
        self.red = red = Reduction(n_nodes, con)
        P = red.P
        self.K = K.tocsr()
        self.Kr = (P.T @ self.K @ P).tocsc()
        nf = red.n_free
        c = con.ncomp
        self.maxiter = maxiter or max(10 * nf, 1000)
        self.Cr = self.ones = None
        if con.mean_zero:
            w = np.asarray(con.mean_weights, dtype=float)
            rows = (c * np.arange(n_nodes)[:, None] + np.arange(c)).ravel()
            cols = np.tile(np.arange(c), n_nodes)
            W = sp.csr_matrix((np.repeat(w, c), (rows, cols)), shape=(c * n_nodes, c))
            self.Cr = (P.T @ W).toarray()
            # constant mode of each component in reduced dofs
            E = sp.csr_matrix((np.ones(c * n_nodes), (np.arange(c * n_nodes), np.tile(np.arange(c), n_nodes))),
                              shape=(c * n_nodes, c))
            self.ones = ((P.T @ E).toarray() > 0).astype(float)
            self.pins = np.array([np.flatnonzero(self.ones[:, k])[0] for k in range(c)])
        if nf == 0:
            self.lu = None
        elif method == "direct":
            A = self.Kr
            if self.Cr is not None:
                A = _pin(A, self.pins)
            self.A = A
            self.lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
        else:
            d = self.Kr.diagonal()
            if np.any(d <= 0):
                raise SolverError("non-positive diagonal entry: Jacobi preconditioner undefined")
            self.Minv = spla.LinearOperator(self.Kr.shape, matvec=lambda v: v / d, dtype=float)

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, dict]:
        """Full-dof solution for one rhs of length ``ncomp * n_nodes``."""
        red = self.red
        br = red.P.T @ (b - self.K @ red.g)
        nf = red.n_free
        scale = np.linalg.norm(br)
        info = {"method": self.method, "n_free": nf, "multiplier": 0.0}
        if nf == 0 or scale == 0.0:
            x = np.zeros(nf)
            info.update(residual=0.0, iterations=0)
        else:
            lam = None
            rhs = br
            if self.Cr is not None:
                lam = np.linalg.solve(self.ones.T @ self.Cr, self.ones.T @ br)
                rhs = br - self.Cr @ lam
                info["multiplier"] = float(np.abs(lam).max())
            if self.method == "direct":
                x, it = self._direct(rhs), 1
            else:
                x, it = self._cg(rhs)
            if self.Cr is not None:
                x = self._project(x)
            r = self.Kr @ x - rhs
            info.update(residual=float(np.linalg.norm(r) / scale), iterations=it)
        if info["residual"] > RESIDUAL_TOL:
            raise SolverError(f"{self.method} solve stopped at relative residual {info['residual']:.3e}")
        u = red.P @ x + red.g
        return u, info

    def _direct(self, rhs):
        if self.Cr is not None:
            rhs = rhs.copy()
            rhs[self.pins] = 0.0
        z = self.lu.solve(rhs)
        for _ in range(3):
            res = rhs - self.A @ z
            if np.linalg.norm(res) <= 1e-14 * np.linalg.norm(rhs):
                break
            z = z + self.lu.solve(res)
        return z

    def _cg(self, rhs):
        it = [0]

        def count(_):
            it[0] += 1

        x, flag = spla.cg(self.Kr, rhs, rtol=1e-13, atol=0.0, maxiter=self.maxiter, M=self.Minv,
                          callback=count)
        if flag != 0:
            res = np.linalg.norm(self.Kr @ x - rhs) / np.linalg.norm(rhs)
            raise SolverError(f"cg_jacobi did not converge in {self.maxiter} iterations "
                              f"(relative residual {res:.3e})")
        return x, it[0]

    def _project(self, x):
        """Subtract the constant mode of each component so that ``Cr^T x = 0``."""
        coef = np.linalg.solve(self.Cr.T @ self.ones, self.Cr.T @ x)
        return x - self.ones @ coef


def _pin(A: sp.spmatrix, pins: np.ndarray) -> sp.csc_matrix:
    """Replace the rows and columns ``pins`` by identity rows."""
    keep = np.ones(A.shape[0])
    keep[pins] = 0.0
    D = sp.diags(keep)
    fix = np.zeros(A.shape[0])
    fix[pins] = 1.0
    return (D @ A @ D + sp.diags(fix)).tocsc()


def solve_system(sys: SparseSystem, method: str = "direct") -> FieldOnMesh:
    """Solve with constraints eliminated; caches the solver on the system."""
    solver = getattr(sys, "_solver", None)
    if solver is None or solver.method != method:
        solver = LinearSolver(sys.matrix, sys.constraints, sys.mesh.n_nodes, method)
        sys._solver = solver
    u, info = solver.solve(sys.rhs)
    vals = u if sys.constraints.ncomp == 1 else u.reshape(-1, sys.constraints.ncomp)
    if info["residual"] > 1e-12:
        warnings.warn(f"solve residual {info['residual']:.2e}", stacklevel=2)
    return FieldOnMesh(sys.mesh, vals, info)
