"""Triangular meshes of the perforated cell, the full cell and the macroscopic domain.

Cells with a disk hole are meshed with a structured O-grid: four sectors
between the square sides and the circle, and (for the full cell) four sectors
between the circle and a small core square plus the core itself. Side nodes
are uniform with ``m = ceil(1/h)`` segments per side, so opposite faces match
exactly and the macroscopic mesh is a plain tiling of scaled cell meshes.
Circle vertices sit at angles linear in the side parameter, so the hole
polygon for ``m`` is a subset of the one for any multiple of ``m``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import MacroDomain, PerforationSpec

__all__ = [
    "MeshError",
    "TriMesh",
    "mesh_unit_cell",
    "mesh_macro",
    "structured_square_mesh",
    "write_mesh",
    "read_mesh",
]

MATERIAL, HOLE = 0, 1
BOUNDARY_TAGS = ("dirichlet_outer", "neumann_hole", "periodic_master", "periodic_slave")
MIN_ANGLE_DEG = 20.0


class MeshError(ValueError):
    """Mesh cannot be generated at the requested resolution or quality."""


@dataclass
class TriMesh:
    nodes: np.ndarray
    elements: np.ndarray
    element_tags: np.ndarray
    boundary_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    boundary_tags: list = field(default_factory=list)
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    period: float = 0.0
    h: float = 0.0
    kind: str = "generic"

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.element_tags = np.ascontiguousarray(self.element_tags, dtype=np.int64)
        self._geom = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def _geometry(self):
        if self._geom is None:
            p = self.nodes[self.elements]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            # gradients of the three barycentric basis functions
            g = np.empty((len(p), 3, 2))
            g[:, 1, 0] = d2[:, 1] / det
            g[:, 1, 1] = -d2[:, 0] / det
            g[:, 2, 0] = -d1[:, 1] / det
            g[:, 2, 1] = d1[:, 0] / det
            g[:, 0] = -g[:, 1] - g[:, 2]
            self._geom = (0.5 * det, g)
        return self._geom

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self._geometry()[0])

    @property
    def signed_areas(self) -> np.ndarray:
        return self._geometry()[0]

    @property
    def basis_gradients(self) -> np.ndarray:
        """(n_elements, 3, 2) gradients of the P1 hat functions."""
        return self._geometry()[1]

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def min_angle(self) -> float:
        p = self.nodes[self.elements]
        angles = []
        for a in range(3):
            u = p[:, (a + 1) % 3] - p[:, a]
            v = p[:, (a + 2) % 3] - p[:, a]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return float(np.min(angles))

    def max_edge(self) -> float:
        p = self.nodes[self.elements]
        e = [np.linalg.norm(p[:, (a + 1) % 3] - p[:, a], axis=1) for a in range(3)]
        return float(np.max(e))

    def submesh(self, tag: int) -> TriMesh:
        """Elements with the given tag, nodes renumbered in original order."""
        keep = self.element_tags == tag
        used = np.zeros(self.n_nodes, dtype=bool)
        used[self.elements[keep].ravel()] = True
        new = -np.ones(self.n_nodes, dtype=np.int64)
        new[used] = np.arange(used.sum())
        m = TriMesh(
            self.nodes[used], new[self.elements[keep]], self.element_tags[keep],
            period=self.period, h=self.h, kind=self.kind,
        )
        m.parent_nodes = np.flatnonzero(used)
        return m

    def boundary_nodes(self, tag: str) -> np.ndarray:
        sel = [i for i, t in enumerate(self.boundary_tags) if t == tag]
        if not sel:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.boundary_edges[sel].ravel())


# ---------------------------------------------------------------------------
# construction helpers

def _grading(a_in: float, a_out: float, length: float) -> np.ndarray:
    """Layer coordinates ``0 = w_0 < ... < w_L = 1`` growing geometrically."""
    if length <= 0:
        raise MeshError("degenerate sector")
    if abs(a_out - a_in) < 1e-3 * a_in:
        n_layers = max(1, int(round(length / a_in)))
        return np.linspace(0.0, 1.0, n_layers + 1)
    n_layers = max(1, int(round(length * math.log(a_out / a_in) / (a_out - a_in))))
    q = (a_out / a_in) ** (1.0 / n_layers)
    k = np.arange(n_layers + 1)
    w = (q**k - 1.0) / (q**n_layers - 1.0)
    w[-1] = 1.0
    return w


def _quad_split(p00, p10, p11, p01, i00, i10, i11, i01):
    """Split quads along the diagonal giving the larger minimum angle."""

    def min_ang(a, b, c):
        out = np.full(len(a), 180.0)
        for u0, u1, u2 in ((a, b, c), (b, c, a), (c, a, b)):
            v1 = u1 - u0
            v2 = u2 - u0
            cs = np.sum(v1 * v2, axis=1) / (np.linalg.norm(v1, axis=1) * np.linalg.norm(v2, axis=1))
            out = np.minimum(out, np.degrees(np.arccos(np.clip(cs, -1, 1))))
        return out

    qa = np.minimum(min_ang(p00, p10, p11), min_ang(p00, p11, p01))
    qb = np.minimum(min_ang(p00, p10, p01), min_ang(p10, p11, p01))
    use_a = qa >= qb - 1e-12
    t1 = np.where(use_a[:, None], np.column_stack([i00, i10, i11]), np.column_stack([i00, i10, i01]))
    t2 = np.where(use_a[:, None], np.column_stack([i00, i11, i01]), np.column_stack([i10, i11, i01]))
    return np.vstack([t1, t2])


def _sector(inner: np.ndarray, outer: np.ndarray, w: np.ndarray, base: int):
    """Nodes and triangles of a ruled sector between two polylines of m+1 points."""
    m1 = len(inner)
    pts = (1.0 - w)[:, None, None] * inner[None] + w[:, None, None] * outer[None]
    pts[0] = inner
    pts[-1] = outer
    idx = base + np.arange(len(w) * m1).reshape(len(w), m1)
    P = pts
    i00 = idx[:-1, :-1].ravel()
    i10 = idx[:-1, 1:].ravel()
    i11 = idx[1:, 1:].ravel()
    i01 = idx[1:, :-1].ravel()
    tri = _quad_split(
        P[:-1, :-1].reshape(-1, 2), P[:-1, 1:].reshape(-1, 2),
        P[1:, 1:].reshape(-1, 2), P[1:, :-1].reshape(-1, 2),
        i00, i10, i11, i01,
    )
    return pts.reshape(-1, 2), tri


def _merge_nodes(nodes: np.ndarray, elements: np.ndarray, tol: float):
    """Identify coincident nodes; the first occurrence survives."""
    pairs = cKDTree(nodes).query_pairs(r=tol, output_type="ndarray")
    n = len(nodes)
    if len(pairs) == 0:
        return nodes, elements
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    first = np.full(labels.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    rep = first[labels]
    keep = np.unique(rep)
    new = -np.ones(n, dtype=np.int64)
    new[keep] = np.arange(len(keep))
    return nodes[keep], new[rep][elements]


def _orient(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    el = elements.copy()
    flip = det < 0
    el[flip, 1], el[flip, 2] = elements[flip, 2], elements[flip, 1]
    return el


def _boundary_edges(elements: np.ndarray) -> np.ndarray:
    e = np.vstack([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = cnt[inv.ravel()] == 1
    return e[once]


def _tag_boundary(mesh: TriMesh, half: float | None = None, lo: float = 0.0, hi: float = 1.0,
                  periodic: bool = False) -> None:
    """Tag boundary edges as outer (square sides) or hole boundary."""
    edges = _boundary_edges(mesh.elements)
    if half is not None:
        lo, hi = -half, half
    p = mesh.nodes
    tol = 1e-9 * max(hi - lo, 1.0)
    tags = []
    for a, b in edges:
        on_side = None
        for ax in (0, 1):
            for v, name in ((lo, "lo"), (hi, "hi")):
                if abs(p[a, ax] - v) < tol and abs(p[b, ax] - v) < tol:
                    on_side = name
        if on_side is None:
            tags.append("neumann_hole")
        elif periodic:
            tags.append("periodic_slave" if on_side == "hi" else "periodic_master")
        else:
            tags.append("dirichlet_outer")
    order = np.lexsort((edges[:, 1], edges[:, 0])) if len(edges) else np.zeros(0, dtype=np.int64)
    mesh.boundary_edges = edges[order].astype(np.int64)
    mesh.boundary_tags = [tags[i] for i in order]


def _periodic_pairs(nodes: np.ndarray) -> np.ndarray:
    """Slave-to-master node map across opposite faces of ``[-1/2, 1/2]^2``."""
    x, y = nodes[:, 0], nodes[:, 1]
    master = np.arange(len(nodes))
    for ax in (0, 1):
        other = 1 - ax
        lo = np.flatnonzero(nodes[:, ax] == -0.5)
        hi = np.flatnonzero(nodes[:, ax] == 0.5)
        lookup = {float(nodes[i, other]): i for i in lo}
        for i in hi:
            j = lookup.get(float(nodes[i, other]))
            if j is None:
                raise MeshError("periodic faces do not match")
            master[i] = j
    # resolve chains (corner to corner)
    for _ in range(3):
        master = master[master]
    slave = np.flatnonzero(master != np.arange(len(nodes)))
    del x, y
    return np.column_stack([slave, master[slave]]).astype(np.int64)


def structured_square_mesh(m: int, lo=(0.0, 0.0), size: float = 1.0) -> TriMesh:
    """Uniform ``m x m`` grid of squares, each cut along the same diagonal."""
    t = np.linspace(0.0, 1.0, m + 1)
    t[-1] = 1.0
    xs = lo[0] + size * t
    ys = lo[1] + size * t
    X, Yc = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Yc.ravel()])
    idx = np.arange((m + 1) ** 2).reshape(m + 1, m + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    elements = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    # interleave so element 2q, 2q+1 share the square q
    elements = elements.reshape(2, -1, 3).transpose(1, 0, 2).reshape(-1, 3)
    mesh = TriMesh(nodes, elements, np.zeros(len(elements), dtype=np.int64), h=size / m, kind="structured")
    mesh.structured = (m, np.asarray(lo, dtype=float), float(size))
    return mesh


def _cell_resolution(spec: PerforationSpec, h: float) -> int:
    if not (h > 0):
        raise MeshError("h must be positive")
    if spec.has_hole:
        if h > spec.hole_radius:
            raise MeshError(f"hole under-resolved: h={h} exceeds hole radius {spec.hole_radius}")
        if h >= spec.gap / 2:
            raise MeshError(f"h={h} does not resolve the gap between holes ({spec.gap})")
    return int(math.ceil(1.0 / h - 1e-9))


def _cell_pieces(spec: PerforationSpec, m: int, include_hole: bool):
    """Raw nodes/elements/tags of the O-grid cell mesh (before merging)."""
    # polygon vertices on the radius that keeps the polygon area equal to pi r^2
    a = 2.0 * np.pi / (4 * m)
    r = spec.hole_radius * math.sqrt(a / math.sin(a))
    c = np.asarray(spec.center)
    t = -0.5 + np.arange(m + 1) / m
    t[0], t[-1] = -0.5, 0.5
    rev = t[::-1]
    half = np.full(m + 1, 0.5)
    sides = [
        np.column_stack([t, -half]),
        np.column_stack([half, t]),
        np.column_stack([rev, half]),
        np.column_stack([-half, rev]),
    ]
    s = np.arange(m + 1) / m
    theta0 = [-0.75 * np.pi, -0.25 * np.pi, 0.25 * np.pi, 0.75 * np.pi]
    arcs = [c + r * np.column_stack([np.cos(a0 + 0.5 * np.pi * s), np.sin(a0 + 0.5 * np.pi * s)])
            for a0 in theta0]

    a_circ = 0.5 * np.pi * r / m
    a_side = 1.0 / m
    lengths = [np.mean(np.linalg.norm(sd - ar, axis=1)) for sd, ar in zip(sides, arcs)]

    nodes, elems, tags = [], [], []
    base = 0
    for sd, ar, ln in zip(sides, arcs, lengths):
        w = _grading(a_circ, a_side, ln)
        p, e = _sector(ar, sd, w, base)
        nodes.append(p)
        elems.append(e)
        tags.append(np.full(len(e), MATERIAL))
        base += len(p)

    if include_hole:
        a_core = 0.45 * r
        tc = -a_core + 2 * a_core * np.arange(m + 1) / m
        rc = tc[::-1]
        hc = np.full(m + 1, a_core)
        core_sides = [
            c + np.column_stack([tc, -hc]),
            c + np.column_stack([hc, tc]),
            c + np.column_stack([rc, hc]),
            c + np.column_stack([-hc, rc]),
        ]
        a_core_sp = 2 * a_core / m
        for cs, ar in zip(core_sides, arcs):
            ln = np.mean(np.linalg.norm(ar - cs, axis=1))
            w = _grading(a_core_sp, a_circ, ln)
            p, e = _sector(cs, ar, w, base)
            nodes.append(p)
            elems.append(e)
            tags.append(np.full(len(e), HOLE))
            base += len(p)
        core = structured_square_mesh(m, lo=(c[0] - a_core, c[1] - a_core), size=2 * a_core)
        nodes.append(core.nodes)
        elems.append(core.elements + base)
        tags.append(np.full(core.n_elements, HOLE))
    return np.vstack(nodes), np.vstack(elems), np.concatenate(tags)


def _check_quality(mesh: TriMesh) -> None:
    if np.any(mesh.signed_areas <= 0):
        raise MeshError("mesh has inverted or degenerate elements")
    ang = mesh.min_angle()
    if ang < MIN_ANGLE_DEG:
        raise MeshError(f"minimum angle {ang:.2f} deg below the {MIN_ANGLE_DEG} deg gate")


def mesh_unit_cell(spec: PerforationSpec, h: float, full: bool = False) -> TriMesh:
    """Mesh of ``Y`` minus the hole, or of all of ``Y`` (hole tagged) when ``full``.

    The full mesh contains the perforated mesh: same nodes first, same
    material elements first, hole elements appended.
    """
    m = _cell_resolution(spec, h)
    if not spec.has_hole:
        mesh = structured_square_mesh(m, lo=(-0.5, -0.5), size=1.0)
        mesh.kind = "cell_full" if full else "cell"
    else:
        nodes, elems, tags = _cell_pieces(spec, m, include_hole=full)
        nodes, elems = _merge_nodes(nodes, elems, tol=1e-3 / m)
        elems = _orient(nodes, elems)
        # material elements first, then hole; node order follows first use
        order = np.argsort(tags, kind="stable")
        elems, tags = elems[order], tags[order]
        first_use = np.full(len(nodes), len(elems) * 3, dtype=np.int64)
        np.minimum.at(first_use, elems.ravel(), np.arange(elems.size))
        perm = np.argsort(first_use, kind="stable")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        mesh = TriMesh(nodes[perm], inv[elems], tags, kind="cell_full" if full else "cell")
    mesh.h = 1.0 / m
    mesh.period = 1.0
    mesh.m = m
    _check_quality(mesh)
    mesh.periodic_pairs = _periodic_pairs(mesh.nodes)
    _tag_boundary(mesh, half=0.5, periodic=True)
    return mesh


def mesh_macro(domain: MacroDomain, h: float, full: bool = False,
               gate: float = 8.0) -> TriMesh:
    """Tiling of ``n x n`` scaled cell meshes; ``full`` keeps the hole elements.

    Enforces the resolution gate ``h <= eps/gate``.
    """
    eps = domain.epsilon
    if h > eps / gate * (1 + 1e-12):
        raise MeshError(f"resolution gate violated: h={h} > eps/{gate:g}={eps / gate}")
    cell = mesh_unit_cell(domain.perforation, h / eps, full=full)
    n = domain.n
    nn, ne = cell.n_nodes, cell.n_elements
    k1, k2 = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    shifts = np.column_stack([k1.ravel(), k2.ravel()]).astype(float) + 0.5
    nodes = (eps * (shifts[:, None, :] + cell.nodes[None])).reshape(-1, 2)
    elems = (cell.elements[None] + nn * np.arange(n * n)[:, None, None]).reshape(-1, 3)
    tags = np.tile(cell.element_tags, n * n)
    nodes, elems = _merge_nodes(nodes, elems, tol=1e-3 * eps / cell.m)
    # snap the outer boundary exactly
    for ax in (0, 1):
        nodes[np.abs(nodes[:, ax]) < 1e-9, ax] = 0.0
        nodes[np.abs(nodes[:, ax] - 1.0) < 1e-9, ax] = 1.0
    if full:
        order = np.argsort(tags, kind="stable")
        elems, tags = elems[order], tags[order]
    mesh = TriMesh(nodes, elems, tags, h=eps / cell.m, kind="macro_full" if full else "macro")
    mesh.m = cell.m
    mesh.cell_index = np.repeat(np.arange(n * n), ne)
    mesh.cell_element = np.tile(np.arange(ne), n * n)
    if full:
        mesh.cell_index = mesh.cell_index[order]
        mesh.cell_element = mesh.cell_element[order]
    # cell-mesh node behind every macro node (periodic images agree)
    mesh.cell_node = np.empty(len(nodes), dtype=np.int64)
    mesh.cell_node[elems.ravel()] = cell.elements[mesh.cell_element].ravel()
    mesh.cell_mesh = cell
    mesh.domain = domain
    _tag_boundary(mesh, lo=0.0, hi=1.0)
    return mesh


# ---------------------------------------------------------------------------
# cache files

def _fmt(v: float) -> str:
    return repr(float(v))


def write_mesh(mesh: TriMesh, stem: str | Path) -> list[Path]:
    """Write ``stem.nodes``, ``stem.elements`` and ``stem.json``; byte-deterministic."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    p_nodes = stem.with_suffix(".nodes")
    p_elems = stem.with_suffix(".elements")
    p_json = stem.with_suffix(".json")
    with open(p_nodes, "w") as fh:
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {_fmt(x)} {_fmt(y)}\n")
    with open(p_elems, "w") as fh:
        for i, (e, t) in enumerate(zip(mesh.elements, mesh.element_tags)):
            fh.write(f"{i} {e[0]} {e[1]} {e[2]} {t}\n")
    side = {
        "kind": mesh.kind,
        "h": mesh.h,
        "period": mesh.period,
        "boundary_edges": mesh.boundary_edges.tolist(),
        "boundary_tags": list(mesh.boundary_tags),
        "periodic_pairs": mesh.periodic_pairs.tolist(),
    }
    p_json.write_text(json.dumps(side, sort_keys=True, separators=(",", ":")))
    return [p_nodes, p_elems, p_json]


def read_mesh(stem: str | Path) -> TriMesh:
    stem = Path(stem)
    nodes = np.loadtxt(stem.with_suffix(".nodes"), ndmin=2)[:, 1:]
    el = np.loadtxt(stem.with_suffix(".elements"), dtype=np.int64, ndmin=2)
    side = json.loads(stem.with_suffix(".json").read_text())
    mesh = TriMesh(
        nodes, el[:, 1:4], el[:, 4],
        boundary_edges=np.asarray(side["boundary_edges"], dtype=np.int64).reshape(-1, 2),
        boundary_tags=side["boundary_tags"],
        periodic_pairs=np.asarray(side["periodic_pairs"], dtype=np.int64).reshape(-1, 2),
        period=side["period"], h=side["h"], kind=side["kind"],
    )
    return mesh


def mesh_digest(mesh: TriMesh) -> str:
    hsh = hashlib.sha256()
    hsh.update(mesh.nodes.tobytes())
    hsh.update(mesh.elements.tobytes())
    hsh.update(mesh.element_tags.tobytes())
    return hsh.hexdigest()[:16]


def tag_square_boundary(mesh: TriMesh) -> TriMesh:
    """Tag every boundary edge of a unit-square mesh as ``dirichlet_outer``."""
    _tag_boundary(mesh, lo=0.0, hi=1.0)
    return mesh
