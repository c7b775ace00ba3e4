import os
import subprocess
import sys

import numpy as np
import pytest

from perfhom import kernels
from perfhom.coefficients import isotropic_tensor
from perfhom.fem import Locator
from perfhom.geometry import build_macro_domain
from perfhom.mesh import mesh_macro

compiled = pytest.importorskip("perfhom.kernels._ckernels", reason="compiled kernels not built")


@pytest.fixture(scope="module")
def mesh(disk):
    return mesh_macro(build_macro_domain("unit_square", 4, disk), 1 / 32)


def test_locate_points_backends_agree(mesh):
    loc = Locator(mesh)
    pts = np.random.default_rng(5).uniform(-0.1, 1.1, size=(5000, 2))
    args = (mesh.nodes, mesh.elements, loc.start, loc.items, loc.lo, loc.inv, loc.shape, pts, 1e-10)
    e_c, b_c = compiled.locate_points(*args)
    e_p, b_p = kernels.pykernels.locate_points(*args)
    assert np.array_equal(e_c, e_p)
    assert np.allclose(b_c, b_p, atol=1e-14)
    assert (e_p == -1).any() and (e_p >= 0).any()


def test_element_matrices_backends_agree(mesh):
    rng = np.random.default_rng(6)
    C = isotropic_tensor(rng.uniform(0.5, 2, mesh.n_elements), rng.uniform(0.5, 2, mesh.n_elements))
    a = compiled.p1_elasticity(mesh.basis_gradients, mesh.areas, np.ascontiguousarray(C))
    b = kernels.pykernels.p1_elasticity(mesh.basis_gradients, mesh.areas, C)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


def test_pure_python_fallback_is_selected_by_env():
    env = dict(os.environ, PERFHOM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import perfhom.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
