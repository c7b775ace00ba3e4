"""Cell problems on the periodic cell: correctors, effective tensor, flux corrector, Psi.

Index conventions follow the coefficient storage ``C[alpha, i, beta, j]``:

* ``chi[node, gamma, beta, j]`` is component ``gamma`` of the corrector for the
  linear strain ``y_j e^beta``;
* ``b[e, alpha, i, beta, j]`` is the flux defect, divergence-free in ``i``;
* ``E[e, k, alpha, i, beta, j]`` is antisymmetric in ``(k, i)`` with
  ``d_k E[k, alpha, i, beta, j] = b[alpha, i, beta, j]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientField, ellipticity_bounds
from .fem import (Constraints, FieldOnMesh, LinearSolver, assemble_elasticity, assemble_laplace,
                  element_coefficients, load_divergence, nodal_weights)
from .geometry import PerforationSpec
from .mesh import HOLE, MATERIAL, TriMesh, mesh_unit_cell

__all__ = [
    "EffectiveTensor",
    "CorrectorSet",
    "solve_cell_corrector",
    "compute_effective_tensor",
    "compute_flux_corrector",
    "solve_auxiliary_Psi",
    "build_corrector_set",
    "flux_divergence_residual",
]

EYE4 = np.einsum("gb,kj->gkbj", np.eye(2), np.eye(2))


@dataclass
class EffectiveTensor:
    entries: np.ndarray
    theta: float

    @property
    def bounds(self) -> tuple[float, float]:
        return ellipticity_bounds(self.entries)

    @property
    def mu0(self) -> float:
        return self.bounds[0]

    @property
    def mu1(self) -> float:
        return self.bounds[1]

    def symmetry_defects(self) -> dict:
        """Relative defects of the three index symmetries."""
        A = self.entries
        s = np.abs(A).max()
        return {
            "major": float(np.abs(A - A.transpose(2, 3, 0, 1)).max() / s),
            "minor_left": float(np.abs(A - A.transpose(1, 0, 2, 3)).max() / s),
            "minor_right": float(np.abs(A - A.transpose(0, 1, 3, 2)).max() / s),
        }

    def voigt(self) -> np.ndarray:
        """3x3 matrix in the orthonormal basis of symmetric 2x2 matrices."""
        from .coefficients import _sym_basis
        B = _sym_basis()
        return np.einsum("pai,aibj,qbj->pq", B, self.entries, B)


@dataclass
class CorrectorSet:
    """Everything attached to one cell solve: correctors, tensors, potentials."""

    spec: PerforationSpec
    coeff: CoefficientField
    h: float
    mesh: TriMesh
    chi: np.ndarray
    grad_chi: np.ndarray
    theta: float
    A_hat: EffectiveTensor | None = None
    mesh_full: TriMesh | None = None
    f: np.ndarray | None = None
    E: np.ndarray | None = None
    b: np.ndarray | None = None
    Psi: FieldOnMesh | None = None
    diagnostics: dict = field(default_factory=dict)

    def chi_field(self, j: int, beta: int) -> FieldOnMesh:
        return FieldOnMesh(self.mesh, self.chi[:, :, beta, j])


def _material_tensor(mesh: TriMesh, coeff: CoefficientField) -> np.ndarray:
    return element_coefficients(mesh, coeff)


def solve_cell_corrector(coeff: CoefficientField, cellmesh: TriMesh, method: str = "direct"):
    """Periodic, mean-zero correctors for the four linear strains; returns ``(chi, grad_chi, theta, info)``."""
    C = _material_tensor(cellmesh, coeff)
    K = assemble_elasticity(cellmesh, C)
    con = Constraints(ncomp=2, periodic_pairs=cellmesh.periodic_pairs,
                      mean_weights=nodal_weights(cellmesh))
    solver = LinearSolver(K, con, cellmesh.n_nodes, method)
    nn = cellmesh.n_nodes
    chi = np.zeros((nn, 2, 2, 2))
    residuals = []
    for beta in range(2):
        for j in range(2):
            u, info = solver.solve(load_divergence(cellmesh, C[:, :, :, beta, j]))
            chi[:, :, beta, j] = u.reshape(nn, 2)
            residuals.append(info["residual"])
    worst = max(residuals)
    if worst > 1e-8:
        warnings.warn(f"cell corrector residual {worst:.2e} exceeds 1e-8", stacklevel=2)
    g = cellmesh.basis_gradients
    grad_chi = np.einsum("eagbj,eak->egkbj", chi[cellmesh.elements], g)
    theta = cellmesh.area
    w = nodal_weights(cellmesh)
    means = np.einsum("n,ngbj->gbj", w, chi)
    info = {"residual": worst, "mean_max": float(np.abs(means).max()),
            "chi_l2": float(np.sqrt(np.einsum("n,ngbj->", w, chi**2))), "method": method}
    return chi, grad_chi, theta, info


def _flux(C: np.ndarray, grad_chi: np.ndarray) -> np.ndarray:
    """``C (I + grad chi)`` per element, indices (e, alpha, i, beta, j)."""
    return np.einsum("eaigk,egkbj->eaibj", C, EYE4[None] + grad_chi)


def compute_effective_tensor(corrector: CorrectorSet, coeff: CoefficientField) -> EffectiveTensor:
    mesh = corrector.mesh
    C = _material_tensor(mesh, coeff)
    flux = _flux(C, corrector.grad_chi)
    A = np.einsum("e,eaibj->aibj", mesh.areas, flux) / corrector.theta
    return EffectiveTensor(A, corrector.theta)


def compute_flux_corrector(corrector: CorrectorSet, coeff: CoefficientField, mesh_full: TriMesh,
                           method: str = "direct"):
    """Potentials ``f`` with ``Laplace f = b`` on the full cell and ``E = d_k f_i - d_i f_k``.

    Returns ``(f, E, b, info)`` with ``f`` nodal on ``mesh_full`` and ``E``, ``b`` per element.
    """
    mesh = corrector.mesh
    ne = mesh.n_elements
    _check_shared(mesh, mesh_full)
    C = _material_tensor(mesh, coeff)
    theta_A = corrector.theta * corrector.A_hat.entries
    b = np.broadcast_to(theta_A, (mesh_full.n_elements, 2, 2, 2, 2)).copy()
    b[:ne] -= _flux(C, corrector.grad_chi)
    mean_b = np.einsum("e,eaibj->aibj", mesh_full.areas, b)
    if np.abs(mean_b).max() > 1e-8:
        warnings.warn(f"flux defect has nonzero mean {np.abs(mean_b).max():.2e}", stacklevel=2)
    K = assemble_laplace(mesh_full)
    con = Constraints(ncomp=1, periodic_pairs=mesh_full.periodic_pairs,
                      mean_weights=nodal_weights(mesh_full))
    solver = LinearSolver(K, con, mesh_full.n_nodes, method)
    nn = mesh_full.n_nodes
    f = np.zeros((nn, 2, 2, 2, 2))
    third = mesh_full.areas / 3.0
    worst = 0.0
    for idx in np.ndindex(2, 2, 2, 2):
        be = b[(slice(None),) + idx]
        if not np.any(be):
            continue
        # weak form of Laplace f = b: K f = -int b phi
        load = np.zeros(nn)
        np.add.at(load, mesh_full.elements.ravel(), np.repeat(-be * third, 3))
        u, info = solver.solve(load)
        f[(slice(None),) + idx] = u
        worst = max(worst, info["residual"])
    g = mesh_full.basis_gradients
    # grad_f[e, k, alpha, i, beta, j] = d_k f[alpha, i, beta, j]
    grad_f = np.einsum("eaxiyj,eak->ekxiyj", f[mesh_full.elements], g)
    E = grad_f - grad_f.transpose(0, 3, 2, 1, 4, 5)
    info = {"residual": worst, "b_mean_max": float(np.abs(mean_b).max())}
    return f, E, b, info


def flux_divergence_residual(mesh_full: TriMesh, E: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nodal weak residual ``-int E_k d_k phi - int b phi`` for every index, periodic nodes folded.

    Shape (n_nodes, 2, 2, 2, 2); slave rows are added onto their masters.
    """
    g = mesh_full.basis_gradients
    a = mesh_full.areas
    contrib = -np.einsum("e,ekxiyj,eak->eaxiyj", a, E, g)
    contrib -= (a / 3.0)[:, None, None, None, None, None] * b[:, None]
    R = np.zeros((mesh_full.n_nodes, 2, 2, 2, 2))
    np.add.at(R, mesh_full.elements.ravel(), contrib.reshape(-1, 2, 2, 2, 2))
    pairs = mesh_full.periodic_pairs
    if len(pairs):
        np.add.at(R, pairs[:, 1], R[pairs[:, 0]])
        R[pairs[:, 0]] = 0.0
    return R


def solve_auxiliary_Psi(spec: PerforationSpec, cellmesh_of_Y: TriMesh, method: str = "direct") -> FieldOnMesh:
    """Periodic mean-zero ``Psi`` with ``-Laplace Psi = 1_material - theta`` on the full cell."""
    mesh = cellmesh_of_Y
    if not spec.has_hole and np.any(mesh.element_tags == HOLE):
        raise ValueError("mesh has hole elements but the perforation has none")
    mat = mesh.element_tags == MATERIAL
    theta = float(mesh.areas[mat].sum()) / mesh.area
    src = mat.astype(float) - theta
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.elements.ravel(), np.repeat(src * mesh.areas / 3.0, 3))
    K = assemble_laplace(mesh)
    con = Constraints(ncomp=1, periodic_pairs=mesh.periodic_pairs, mean_weights=nodal_weights(mesh))
    u, info = LinearSolver(K, con, mesh.n_nodes, method).solve(load)
    psi = FieldOnMesh(mesh, u, dict(info, theta=theta))
    psi.grad = psi.gradient()
    return psi


def _check_shared(mesh: TriMesh, mesh_full: TriMesh) -> None:
    nn, ne = mesh.n_nodes, mesh.n_elements
    if not (np.array_equal(mesh_full.nodes[:nn], mesh.nodes)
            and np.array_equal(mesh_full.elements[:ne], mesh.elements)):
        raise ValueError("full-cell mesh does not extend the perforated cell mesh")


def build_corrector_set(spec: PerforationSpec, coeff: CoefficientField, h: float,
                        method: str = "direct") -> CorrectorSet:
    """Run every cell solve and the algebraic checks."""
    mesh = mesh_unit_cell(spec, h)
    mesh_full = mesh_unit_cell(spec, h, full=True)
    chi, grad_chi, theta, info = solve_cell_corrector(coeff, mesh, method)
    cs = CorrectorSet(spec, coeff, h, mesh, chi, grad_chi, theta, mesh_full=mesh_full)
    cs.A_hat = compute_effective_tensor(cs, coeff)
    f, E, b, finfo = compute_flux_corrector(cs, coeff, mesh_full, method)
    cs.f, cs.E, cs.b = f, E, b
    cs.Psi = solve_auxiliary_Psi(spec, mesh_full, method)
    R = flux_divergence_residual(mesh_full, E, b)
    C = _material_tensor(mesh, coeff)
    energy = float(np.einsum("e,eaibj,eaigk,egkbj->", mesh.areas, grad_chi, C, grad_chi))
    cs.diagnostics = {
        "cell_residual": info["residual"],
        "chi_mean_max": info["mean_max"],
        "chi_l2": info["chi_l2"],
        "corrector_energy": energy,
        "theta": theta,
        "hole_area_mesh": float(mesh_full.area - theta),
        "b_mean_max": finfo["b_mean_max"],
        "flux_residual": finfo["residual"],
        "div_E_residual": float(np.abs(R).max()),
        "E_antisymmetry": float(np.abs(E + E.transpose(0, 3, 2, 1, 4, 5)).max()),
        "psi_mean": float(cs.Psi.integral()),
        "A_hat_symmetry": max(cs.A_hat.symmetry_defects().values()),
        "mu0_hat": cs.A_hat.mu0,
        "mu1_hat": cs.A_hat.mu1,
    }
    return cs
