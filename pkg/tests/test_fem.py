import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.coefficients import isotropic_tensor
from perfhom.fem import (
    Constraints,
    FieldOnMesh,
    LinearSolver,
    SingularSystemError,
    assemble,
    assemble_elasticity,
    locator,
    solve_system,
    triangle_rule,
)
from perfhom.geometry import build_macro_domain
from perfhom.mesh import TriMesh, mesh_macro, mesh_unit_cell, structured_square_mesh, tag_square_boundary


def _reference_triangle():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                   np.zeros(1, dtype=np.int64))


def test_reference_element_matrix():
    mesh = _reference_triangle()
    K = assemble_elasticity(mesh, isotropic_tensor(1.0, 1.0)[None]).toarray()
    # hand-computed entries for lam = mu = 1 (area 1/2, dofs 2 * node + comp)
    assert K[2, 2] == pytest.approx(1.5)   # node 1, comp 0: (lam + 2 mu) / 2
    assert K[2, 5] == pytest.approx(0.5)   # node 1 comp 0 vs node 2 comp 1: lam / 2
    assert K[3, 4] == pytest.approx(0.5)   # node 1 comp 1 vs node 2 comp 0: mu / 2
    assert K[0, 0] == pytest.approx(2.0)   # node 0, comp 0: (3 + 1) / 2
    assert K[2, 4] == pytest.approx(0.0)
    assert np.allclose(K, K.T)
    # rigid motions are in the kernel
    x = mesh.nodes
    for u in (np.tile([1.0, 0.0], 3), np.tile([0.0, 1.0], 3), np.column_stack([-x[:, 1], x[:, 0]]).ravel()):
        assert np.allclose(K @ u, 0.0, atol=1e-14)


@pytest.mark.parametrize("degree", [1, 2, 5])
def test_triangle_rules_integrate_polynomials(degree):
    pts, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(1.0)
    # barycentric monomial l0^degree has mean 2 * degree! / (degree + 2)!
    from math import factorial
    exact = 2 * factorial(degree) / factorial(degree + 2)
    assert np.dot(w, pts[:, 0] ** degree) == pytest.approx(exact, rel=1e-12)


def test_zero_data_gives_zero_rhs(disk, lame):
    mesh = mesh_unit_cell(disk, 1 / 16)
    sys = assemble(mesh, lame, {"F": lambda x: np.zeros_like(x), "f": np.zeros((mesh.n_elements, 2, 2))})
    assert not sys.rhs.any()


def test_stiffness_is_symmetric_psd(disk, lame, rng):
    mesh = mesh_macro(build_macro_domain("unit_square", 2, disk), 1 / 16)
    sys = assemble(mesh, lame, eps=0.5)
    assert sys.symmetry_defect() <= 1e-12
    X = rng.normal(size=(sys.matrix.shape[0], 100))
    q = np.einsum("ik,ik->k", X, sys.matrix @ X)
    assert q.min() >= -1e-10 * np.abs(q).max()


def test_kernel_is_translations_on_periodic_cell(disk, lame):
    mesh = mesh_unit_cell(disk, 1 / 8)
    sys = assemble(mesh, lame)
    con = Constraints(ncomp=2, periodic_pairs=mesh.periodic_pairs)
    from perfhom.fem import Reduction
    red = Reduction(mesh.n_nodes, con)
    Kr = (red.P.T @ sys.matrix @ red.P).toarray()
    ev = np.linalg.eigvalsh(Kr)
    assert np.sum(ev < 1e-10 * ev.max()) == 2


def test_fully_constrained_system_returns_constraint_values(rng):
    mesh = structured_square_mesh(4)
    vals = rng.normal(size=(mesh.n_nodes, 2))
    con = Constraints(ncomp=2, dirichlet_nodes=np.arange(mesh.n_nodes), dirichlet_values=vals)
    sys = assemble(mesh, isotropic_tensor(np.ones(mesh.n_elements), np.ones(mesh.n_elements)),
                   {"F": lambda x: rng.normal(size=x.shape)}, constraints=con)
    u = solve_system(sys)
    assert np.array_equal(u.values, vals)


def test_singular_system_is_reported(disk, lame):
    mesh = mesh_unit_cell(disk, 1 / 8)
    sys = assemble(mesh, lame, constraints=Constraints(ncomp=2, periodic_pairs=mesh.periodic_pairs))
    with pytest.raises(SingularSystemError):
        solve_system(sys)


def _poisson(m, method="direct"):
    mesh = tag_square_boundary(structured_square_mesh(m))
    bd = mesh.boundary_nodes("dirichlet_outer")
    src = lambda x: 2 * np.pi**2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    sys = assemble(mesh, None, {"F": src}, ncomp=1,
                   constraints=Constraints(ncomp=1, dirichlet_nodes=bd))
    u = solve_system(sys, method)
    exact = lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    pts, w = triangle_rule(5)
    p = mesh.nodes[mesh.elements]
    l2 = h1 = 0.0
    g = u.gradient()
    for q in range(len(w)):
        x = np.einsum("a,ead->ed", pts[q], p)
        uh = np.einsum("ea,a->e", u.values[mesh.elements], pts[q])
        gx = np.column_stack([np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                              np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])])
        l2 += w[q] * np.dot(mesh.areas, (uh - exact(x)) ** 2)
        h1 += w[q] * np.dot(mesh.areas, np.sum((g - gx) ** 2, axis=1))
    return np.sqrt(l2), np.sqrt(h1), sys, u


def test_manufactured_poisson_rates():
    errs = [_poisson(m)[:2] for m in (8, 16, 32, 64)]
    l2 = np.log2([e[0] for e in errs])
    h1 = np.log2([e[1] for e in errs])
    r_l2 = -np.polyfit(np.arange(4), l2, 1)[0]
    r_h1 = -np.polyfit(np.arange(4), h1, 1)[0]
    assert r_l2 == pytest.approx(2.0, abs=0.2)
    assert r_h1 == pytest.approx(1.0, abs=0.2)


def test_cg_agrees_with_direct():
    a = _poisson(16, "direct")[3]
    b = _poisson(16, "cg_jacobi")[3]
    assert np.abs(a.values - b.values).max() < 1e-10


def test_galerkin_orthogonality(rng):
    _, _, sys, u = _poisson(16)
    mesh = sys.mesh
    bd = sys.constraints.dirichlet_nodes
    for _ in range(5):
        phi = rng.normal(size=mesh.n_nodes)
        phi[bd] = 0.0
        resid = phi @ (sys.matrix @ u.values) - phi @ sys.rhs
        K = sys.matrix
        h1 = np.sqrt(phi @ (K @ phi) + np.sum(phi**2) * mesh.h**2)
        assert abs(resid) <= 1e-9 * h1


def test_mean_zero_constraint(disk):
    mesh = mesh_unit_cell(disk, 1 / 16)
    from perfhom.fem import nodal_weights
    w = nodal_weights(mesh)
    K = sp.csr_matrix(assemble(mesh, None, ncomp=1).matrix)
    b = w * np.cos(2 * np.pi * mesh.nodes[:, 0])
    b -= w * (b.sum() / w.sum())
    con = Constraints(ncomp=1, periodic_pairs=mesh.periodic_pairs, mean_weights=w)
    u, info = LinearSolver(K, con, mesh.n_nodes).solve(b)
    assert abs(np.dot(w, u)) <= 1e-12
    assert info["residual"] <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_p1_interpolates_linears(a, b, c):
    mesh = structured_square_mesh(8)
    f = FieldOnMesh(mesh, a + b * mesh.nodes[:, 0] + c * mesh.nodes[:, 1])
    pts = np.random.default_rng(7).random((50, 2))
    assert np.allclose(f.evaluate(pts), a + b * pts[:, 0] + c * pts[:, 1], atol=1e-12)
    assert np.allclose(f.gradient(), [b, c], atol=1e-12)


def test_locator_finds_containing_element(disk, rng):
    mesh = mesh_macro(build_macro_domain("unit_square", 4, disk), 1 / 32)
    pts = mesh.centroids[rng.choice(mesh.n_elements, 200, replace=False)]
    elem, bary = locator(mesh).locate(pts)
    assert np.all(elem >= 0)
    assert np.all(bary >= -1e-10)
    back = np.einsum("na,nad->nd", bary, mesh.nodes[mesh.elements[elem]])
    assert np.allclose(back, pts, atol=1e-12)
    centre = build_macro_domain("unit_square", 4, disk).hole_centers[:1]
    assert locator(mesh).locate(centre)[0][0] == -1
