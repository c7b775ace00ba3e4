"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--h 0.0078125] [--points 200000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from perfhom.coefficients import isotropic_tensor
from perfhom.fem import Locator
from perfhom.geometry import PerforationSpec, build_macro_domain
from perfhom.kernels import pykernels
from perfhom.mesh import mesh_macro

try:
    from perfhom.kernels import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=8, help="cells per side")
    p.add_argument("--h", type=float, default=1 / 128, help="mesh size")
    p.add_argument("--points", type=int, default=200_000, help="query points for locate_points")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    mesh = mesh_macro(build_macro_domain("unit_square", args.n, PerforationSpec("disk", 0.25)), args.h)
    loc = Locator(mesh)
    pts = np.random.default_rng(0).uniform(0, 1, size=(args.points, 2))
    C = np.ascontiguousarray(np.broadcast_to(isotropic_tensor(1.0, 1.0), (mesh.n_elements, 2, 2, 2, 2)))
    loc_args = (mesh.nodes, mesh.elements, loc.start, loc.items, loc.lo, loc.inv, loc.shape, pts, 1e-10)
    ela_args = (mesh.basis_gradients, mesh.areas, C)

    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_elements} triangles; {args.points} query points")
    print(f"{'kernel':<16}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, kargs in (("locate_points", loc_args), ("p1_elasticity", ela_args)):
        t_py = _best(lambda: getattr(pykernels, name)(*kargs), args.repeat)
        if _ckernels is None:
            print(f"{name:<16}{t_py:12.4f}{'n/a':>12}{'n/a':>10}")
            continue
        t_c = _best(lambda: getattr(_ckernels, name)(*kargs), args.repeat)
        print(f"{name:<16}{t_py:12.4f}{t_c:12.4f}{t_py / t_c:9.1f}x")


if __name__ == "__main__":
    main()
