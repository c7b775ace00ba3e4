"""NumPy implementations of the hot kernels (reference and fallback)."""

import numpy as np


def locate_points(nodes, elements, bucket_start, bucket_items, grid_lo, grid_inv, grid_shape,
                  points, tol):
    """First element (in bucket order) containing each point, with barycentrics.

    Returns ``elem`` (-1 where no element contains the point) and ``bary``.
    """
    points = np.ascontiguousarray(points, dtype=float)
    npts = len(points)
    nx, ny = int(grid_shape[0]), int(grid_shape[1])
    ix = np.floor((points[:, 0] - grid_lo[0]) * grid_inv[0]).astype(np.int64)
    iy = np.floor((points[:, 1] - grid_lo[1]) * grid_inv[1]).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    b = np.where(inside, ix * ny + iy, 0)
    start = np.where(inside, bucket_start[b], 0)
    count = np.where(inside, bucket_start[b + 1] - bucket_start[b], 0)
    elem = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, 3))
    todo = np.flatnonzero(count > 0)
    k = 0
    while len(todo):
        cand = bucket_items[start[todo] + k]
        p = nodes[elements[cand]]
        x = points[todo]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = x - p[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        l0 = 1.0 - l1 - l2
        hit = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        got = todo[hit]
        elem[got] = cand[hit]
        bary[got, 0] = l0[hit]
        bary[got, 1] = l1[hit]
        bary[got, 2] = l2[hit]
        k += 1
        todo = todo[~hit]
        todo = todo[count[todo] > k]
    return elem, bary


def p1_elasticity(grads, areas, coef):
    """Element matrices ``K[e, 2a+alpha, 2b+beta]`` for tensor ``coef[e, alpha, i, beta, j]``."""
    ne = len(areas)
    ke = np.einsum("e,eaibj,eAi,eBj->eAaBb", areas, coef, grads, grads, optimize=True)
    return ke.reshape(ne, 6, 6)
