# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef long long i64


def rasterize_min(cu, cv, depth, Py_ssize_t width, Py_ssize_t height):
    cdef const i64[:] u = np.ascontiguousarray(cu, dtype=np.int64)
    cdef const i64[:] v = np.ascontiguousarray(cv, dtype=np.int64)
    cdef const double[:] z = np.ascontiguousarray(depth, dtype=np.float64)
    grid_np = np.full(height * width, INFINITY, dtype=np.float64)
    cdef double[:] grid = grid_np
    cdef Py_ssize_t i, cell, n = z.shape[0]
    with nogil:
        for i in range(n):
            cell = v[i] * width + u[i]
            if z[i] < grid[cell]:
                grid[cell] = z[i]
    valid = np.isfinite(grid_np)
    grid_np[~valid] = 0.0
    return grid_np.reshape(height, width), valid.reshape(height, width)


cdef inline bint _gt_x(i64 x, i64 a, i64 b, i64 d) nogil:
    cdef i64 t = x * d - a
    return t > 0 or (t == 0 and b < 0)


cdef inline bint _le(i64 a1, i64 b1, i64 d1, i64 a2, i64 b2, i64 d2) nogil:
    cdef i64 l = a1 * d2
    cdef i64 r = a2 * d1
    if l != r:
        return l < r
    return b1 * d2 <= b2 * d1


def nearest_site(valid_in):
    valid_np = np.ascontiguousarray(valid_in, dtype=np.uint8)
    if not valid_np.any():
        raise ValueError("empty sparse map")
    cdef const unsigned char[:, :] valid = valid_np
    cdef Py_ssize_t h = valid.shape[0], w = valid.shape[1]
    g_np = np.empty((h, w), dtype=np.int64)
    s_np = np.empty((h, w), dtype=np.int64)
    out_r_np = np.empty((h, w), dtype=np.int64)
    out_c_np = np.empty((h, w), dtype=np.int64)
    cdef i64[:, :] g = g_np
    cdef i64[:, :] srow = s_np
    cdef i64[:, :] out_r = out_r_np
    cdef i64[:, :] out_c = out_c_np
    cdef i64[:] vv = np.empty(w, dtype=np.int64)
    cdef i64[:] za = np.empty(w, dtype=np.int64)
    cdef i64[:] zb = np.empty(w, dtype=np.int64)
    cdef i64[:] zd = np.empty(w, dtype=np.int64)
    cdef i64[:] last = np.empty(h, dtype=np.int64)
    cdef Py_ssize_t r, c, q, p, x, n, k
    cdef i64 above, below, a, b, d, hq, kq

    with nogil:
        # pass 1: nearest valid row per column, ties to the upper row
        for c in range(w):
            above = -1
            for r in range(h):
                if valid[r, c]:
                    above = r
                last[r] = above
            below = -1
            for r in range(h - 1, -1, -1):
                if valid[r, c]:
                    below = r
                above = last[r]
                if above < 0 and below < 0:
                    g[r, c] = -1
                    srow[r, c] = -1
                elif below < 0 or (above >= 0 and r - above <= below - r):
                    g[r, c] = (r - above) * (r - above)
                    srow[r, c] = above
                else:
                    g[r, c] = (below - r) * (below - r)
                    srow[r, c] = below

        # pass 2: lower envelope of tie-keyed parabolas per row
        for r in range(h):
            n = 0
            for q in range(w):
                hq = g[r, q]
                if hq < 0:
                    continue
                kq = srow[r, q] * w + q
                while n > 0:
                    p = vv[n - 1]
                    a = (hq + q * q) - (g[r, p] + p * p)
                    b = kq - (srow[r, p] * w + p)
                    d = 2 * (q - p)
                    if zd[n - 1] == 0 or not _le(a, b, d, za[n - 1], zb[n - 1], zd[n - 1]):
                        break
                    n -= 1
                if n == 0:
                    vv[0] = q
                    za[0] = 0
                    zb[0] = 0
                    zd[0] = 0
                    n = 1
                else:
                    vv[n] = q
                    za[n] = a
                    zb[n] = b
                    zd[n] = d
                    n += 1
            k = 0
            for x in range(w):
                while k + 1 < n and _gt_x(x, za[k + 1], zb[k + 1], zd[k + 1]):
                    k += 1
                q = vv[k]
                out_r[r, x] = srow[r, q]
                out_c[r, x] = q
    return out_r_np, out_c_np
