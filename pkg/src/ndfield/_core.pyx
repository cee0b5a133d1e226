# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: hash-grid encode/scatter and bilinear warp sampling.

Same contracts as ndfield._kernels_np; see that module for documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

cdef unsigned int HASH_P1 = 1u
cdef unsigned int HASH_P2 = 2654435761u


cdef inline long _slot(long cx, long cy, long resolution, bint dense,
                       unsigned int mask) nogil:
    if dense:
        return cy * (resolution + 1) + cx
    return <long>(((<unsigned int>cx) * HASH_P1
                   ^ (<unsigned int>cy) * HASH_P2) & mask)


def hash_encode(double[:, :, ::1] tables, cnp.int64_t[:] resolutions,
                dense_flags, double[:, ::1] xs):
    cdef Py_ssize_t L = tables.shape[0]
    cdef Py_ssize_t T = tables.shape[1]
    cdef Py_ssize_t F = tables.shape[2]
    cdef Py_ssize_t n = xs.shape[0]
    cdef cnp.uint8_t[:] dense = np.ascontiguousarray(dense_flags,
                                                     dtype=np.uint8)
    cdef unsigned int mask = <unsigned int>(T - 1)

    feats_arr = np.empty((n, L * F))
    corners_arr = np.empty((n, L, 4), dtype=np.int64)
    weights_arr = np.empty((n, L, 4))
    cdef double[:, ::1] feats = feats_arr
    cdef cnp.int64_t[:, :, ::1] corners = corners_arr
    cdef double[:, :, ::1] weights = weights_arr

    cdef Py_ssize_t i, lev, f, k
    cdef long N, cx0, cy0, s0, s1, s2, s3
    cdef double x, y, px, py, fx, fy, w0, w1, w2, w3
    with nogil:
        for i in range(n):
            x = xs[i, 0]
            if x < 0.0:
                x = 0.0
            elif x > 1.0:
                x = 1.0
            y = xs[i, 1]
            if y < 0.0:
                y = 0.0
            elif y > 1.0:
                y = 1.0
            for lev in range(L):
                N = <long>resolutions[lev]
                px = x * N
                py = y * N
                cx0 = <long>floor(px)
                if cx0 > N - 1:
                    cx0 = N - 1
                cy0 = <long>floor(py)
                if cy0 > N - 1:
                    cy0 = N - 1
                fx = px - cx0
                fy = py - cy0
                s0 = _slot(cx0, cy0, N, dense[lev], mask)
                s1 = _slot(cx0 + 1, cy0, N, dense[lev], mask)
                s2 = _slot(cx0, cy0 + 1, N, dense[lev], mask)
                s3 = _slot(cx0 + 1, cy0 + 1, N, dense[lev], mask)
                w0 = (1.0 - fx) * (1.0 - fy)
                w1 = fx * (1.0 - fy)
                w2 = (1.0 - fx) * fy
                w3 = fx * fy
                corners[i, lev, 0] = s0
                corners[i, lev, 1] = s1
                corners[i, lev, 2] = s2
                corners[i, lev, 3] = s3
                weights[i, lev, 0] = w0
                weights[i, lev, 1] = w1
                weights[i, lev, 2] = w2
                weights[i, lev, 3] = w3
                for f in range(F):
                    feats[i, lev * F + f] = (
                        w0 * tables[lev, s0, f] + w1 * tables[lev, s1, f]
                        + w2 * tables[lev, s2, f] + w3 * tables[lev, s3, f])
    return feats_arr, corners_arr, weights_arr


def hash_scatter(double[:, :, ::1] grad_tables,
                 cnp.int64_t[:, :, ::1] corners, double[:, :, ::1] weights,
                 double[:, ::1] cot_feats):
    cdef Py_ssize_t L = grad_tables.shape[0]
    cdef Py_ssize_t F = grad_tables.shape[2]
    cdef Py_ssize_t n = corners.shape[0]
    cdef Py_ssize_t i, lev, f, k
    cdef double c
    with nogil:
        for i in range(n):
            for lev in range(L):
                for f in range(F):
                    c = cot_feats[i, lev * F + f]
                    for k in range(4):
                        grad_tables[lev, corners[i, lev, k], f] += (
                            weights[i, lev, k] * c)


def warp_views(double[:, :, :, ::1] views, double[:, ::1] deltas,
               double[:, ::1] xs, double[:] d):
    cdef Py_ssize_t V = views.shape[0]
    cdef Py_ssize_t H = views.shape[1]
    cdef Py_ssize_t W = views.shape[2]
    cdef Py_ssize_t C = views.shape[3]
    cdef Py_ssize_t n = xs.shape[0]

    vals_arr = np.zeros((V, n, C))
    dvdd_arr = np.zeros((V, n, C))
    inb_arr = np.zeros((V, n), dtype=bool)
    cdef double[:, :, ::1] vals = vals_arr
    cdef double[:, :, ::1] dvdd = dvdd_arr
    cdef cnp.uint8_t[:, ::1] inb = inb_arr.view(np.uint8)

    cdef Py_ssize_t v, i, c
    cdef long x0, y0, x1, y1
    cdef double du, dv, px, py, fx, fy, g00, g10, g01, g11, dvx, dvy
    with nogil:
        for v in range(V):
            du = deltas[v, 0]
            dv = deltas[v, 1]
            for i in range(n):
                px = xs[i, 0] + du * d[i]
                py = xs[i, 1] + dv * d[i]
                if px < 0.0 or px > W - 1.0 or py < 0.0 or py > H - 1.0:
                    continue
                inb[v, i] = 1
                if W >= 2:
                    x0 = <long>floor(px)
                    if x0 > W - 2:
                        x0 = W - 2
                    fx = px - x0
                else:
                    x0 = 0
                    fx = 0.0
                if H >= 2:
                    y0 = <long>floor(py)
                    if y0 > H - 2:
                        y0 = H - 2
                    fy = py - y0
                else:
                    y0 = 0
                    fy = 0.0
                x1 = x0 + 1 if W >= 2 else x0
                y1 = y0 + 1 if H >= 2 else y0
                for c in range(C):
                    g00 = views[v, y0, x0, c]
                    g10 = views[v, y0, x1, c]
                    g01 = views[v, y1, x0, c]
                    g11 = views[v, y1, x1, c]
                    vals[v, i, c] = ((1 - fx) * (1 - fy) * g00
                                     + fx * (1 - fy) * g10
                                     + (1 - fx) * fy * g01 + fx * fy * g11)
                    dvx = (1 - fy) * (g10 - g00) + fy * (g11 - g01)
                    dvy = (1 - fx) * (g01 - g00) + fx * (g11 - g10)
                    dvdd[v, i, c] = du * dvx + dv * dvy
    return vals_arr, dvdd_arr, inb_arr


def sample_grad(double[:, :, ::1] img, double[:, ::1] ps):
    cdef Py_ssize_t H = img.shape[0]
    cdef Py_ssize_t W = img.shape[1]
    cdef Py_ssize_t C = img.shape[2]
    cdef Py_ssize_t n = ps.shape[0]

    vals_arr = np.zeros((n, C))
    dcol_arr = np.zeros((n, C))
    drow_arr = np.zeros((n, C))
    inb_arr = np.zeros(n, dtype=bool)
    cdef double[:, ::1] vals = vals_arr
    cdef double[:, ::1] dcol = dcol_arr
    cdef double[:, ::1] drow = drow_arr
    cdef cnp.uint8_t[:] inb = inb_arr.view(np.uint8)

    cdef Py_ssize_t i, c
    cdef long x0, y0, x1, y1
    cdef double px, py, fx, fy, g00, g10, g01, g11
    with nogil:
        for i in range(n):
            px = ps[i, 0]
            py = ps[i, 1]
            if px < 0.0 or px > W - 1.0 or py < 0.0 or py > H - 1.0:
                continue
            inb[i] = 1
            if W >= 2:
                x0 = <long>floor(px)
                if x0 > W - 2:
                    x0 = W - 2
                fx = px - x0
            else:
                x0 = 0
                fx = 0.0
            if H >= 2:
                y0 = <long>floor(py)
                if y0 > H - 2:
                    y0 = H - 2
                fy = py - y0
            else:
                y0 = 0
                fy = 0.0
            x1 = x0 + 1 if W >= 2 else x0
            y1 = y0 + 1 if H >= 2 else y0
            for c in range(C):
                g00 = img[y0, x0, c]
                g10 = img[y0, x1, c]
                g01 = img[y1, x0, c]
                g11 = img[y1, x1, c]
                vals[i, c] = ((1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10
                              + (1 - fx) * fy * g01 + fx * fy * g11)
                dcol[i, c] = (1 - fy) * (g10 - g00) + fy * (g11 - g01)
                drow[i, c] = (1 - fx) * (g01 - g00) + fx * (g11 - g10)
    return vals_arr, dcol_arr, drow_arr, inb_arr
