# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; same contracts as ``pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def locate_points(double[:, ::1] nodes, cnp.int64_t[:, ::1] elements,
                  cnp.int64_t[::1] bucket_start, cnp.int64_t[::1] bucket_items,
                  grid_lo, grid_inv, grid_shape, points_in, double tol):
    cdef double[:, ::1] points = np.ascontiguousarray(points_in, dtype=np.float64)
    cdef Py_ssize_t npts = points.shape[0]
    cdef long long nx = grid_shape[0], ny = grid_shape[1]
    cdef double lox = grid_lo[0], loy = grid_lo[1]
    cdef double invx = grid_inv[0], invy = grid_inv[1]
    elem_arr = np.full(npts, -1, dtype=np.int64)
    bary_arr = np.zeros((npts, 3), dtype=np.float64)
    cdef cnp.int64_t[::1] elem = elem_arr
    cdef double[:, ::1] bary = bary_arr
    cdef Py_ssize_t q, k
    cdef long long ix, iy, b, c, i0, i1, i2
    cdef double x, y, ax, ay, d1x, d1y, d2x, d2y, det, rx, ry, l0, l1, l2
    for q in range(npts):
        x = points[q, 0]
        y = points[q, 1]
        ix = <long long>floor((x - lox) * invx)
        iy = <long long>floor((y - loy) * invy)
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
            continue
        b = ix * ny + iy
        for k in range(bucket_start[b], bucket_start[b + 1]):
            c = bucket_items[k]
            i0 = elements[c, 0]
            i1 = elements[c, 1]
            i2 = elements[c, 2]
            ax = nodes[i0, 0]
            ay = nodes[i0, 1]
            d1x = nodes[i1, 0] - ax
            d1y = nodes[i1, 1] - ay
            d2x = nodes[i2, 0] - ax
            d2y = nodes[i2, 1] - ay
            det = d1x * d2y - d1y * d2x
            rx = x - ax
            ry = y - ay
            l1 = (rx * d2y - ry * d2x) / det
            l2 = (d1x * ry - d1y * rx) / det
            l0 = 1.0 - l1 - l2
            if l0 >= -tol and l1 >= -tol and l2 >= -tol:
                elem[q] = c
                bary[q, 0] = l0
                bary[q, 1] = l1
                bary[q, 2] = l2
                break
    return elem_arr, bary_arr


def p1_elasticity(double[:, :, ::1] grads, double[::1] areas, coef_in):
    cdef double[:, :, :, :, ::1] coef = np.ascontiguousarray(coef_in, dtype=np.float64)
    cdef Py_ssize_t ne = areas.shape[0]
    out_arr = np.zeros((ne, 6, 6), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t e, a, b, al, be, i, j
    cdef double s
    for e in range(ne):
        for a in range(3):
            for al in range(2):
                for b in range(3):
                    for be in range(2):
                        s = 0.0
                        for i in range(2):
                            for j in range(2):
                                s += coef[e, al, i, be, j] * grads[e, a, i] * grads[e, b, j]
                        out[e, 2 * a + al, 2 * b + be] = s * areas[e]
    return out_arr
