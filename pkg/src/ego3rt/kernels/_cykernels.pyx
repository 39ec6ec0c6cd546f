# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy sampling kernels (float64 only).

Semantics match ``numpy_impl`` exactly; see that module for the
coordinate and padding conventions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fmod

cnp.import_array()


cdef inline double _clampd(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def sample_bilinear_fwd(double[:, :, ::1] fmap, double[::1] rows,
                        double[::1] cols, bint wrap_cols=False):
    cdef Py_ssize_t h = fmap.shape[0], w = fmap.shape[1], c = fmap.shape[2]
    cdef Py_ssize_t n = rows.shape[0]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, ch, r0, r1, c0, c1
    cdef double r, cc, fr, fc, w00, w01, w10, w11

    with nogil:
        for i in range(n):
            r = _clampd(rows[i], 0.0, h - 1.0)
            r0 = <Py_ssize_t>floor(r)
            if r0 > h - 2:
                r0 = h - 2
            if r0 < 0:
                r0 = 0
            r1 = r0 + 1
            if r1 > h - 1:
                r1 = h - 1
            fr = r - r0

            if wrap_cols:
                cc = fmod(cols[i], <double>w)
                if cc < 0:
                    cc += w
                c0 = <Py_ssize_t>floor(cc)
                if c0 > w - 1:
                    c0 = w - 1
                c1 = (c0 + 1) % w
                fc = cc - c0
            else:
                cc = _clampd(cols[i], 0.0, w - 1.0)
                c0 = <Py_ssize_t>floor(cc)
                if c0 > w - 2:
                    c0 = w - 2
                if c0 < 0:
                    c0 = 0
                c1 = c0 + 1
                if c1 > w - 1:
                    c1 = w - 1
                fc = cc - c0

            w00 = (1.0 - fr) * (1.0 - fc)
            w01 = (1.0 - fr) * fc
            w10 = fr * (1.0 - fc)
            w11 = fr * fc
            for ch in range(c):
                out[i, ch] = (w00 * fmap[r0, c0, ch] + w01 * fmap[r0, c1, ch]
                              + w10 * fmap[r1, c0, ch] + w11 * fmap[r1, c1, ch])
    return out_arr


def sample_bilinear_bwd(double[:, :, ::1] fmap, double[::1] rows,
                        double[::1] cols, double[:, ::1] d_out,
                        bint wrap_cols=False):
    cdef Py_ssize_t h = fmap.shape[0], w = fmap.shape[1], c = fmap.shape[2]
    cdef Py_ssize_t n = rows.shape[0]
    d_map_arr = np.zeros((h, w, c), dtype=np.float64)
    d_rows_arr = np.zeros(n, dtype=np.float64)
    d_cols_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, :, ::1] d_map = d_map_arr
    cdef double[::1] d_rows = d_rows_arr
    cdef double[::1] d_cols = d_cols_arr
    cdef Py_ssize_t i, ch, r0, r1, c0, c1
    cdef double r, cc, fr, fc, g, dr, dc, w00, w01, w10, w11
    cdef bint inside_r, inside_c

    with nogil:
        for i in range(n):
            inside_r = (rows[i] >= 0.0) and (rows[i] <= h - 1.0)
            r = _clampd(rows[i], 0.0, h - 1.0)
            r0 = <Py_ssize_t>floor(r)
            if r0 > h - 2:
                r0 = h - 2
            if r0 < 0:
                r0 = 0
            r1 = r0 + 1
            if r1 > h - 1:
                r1 = h - 1
            fr = r - r0

            if wrap_cols:
                inside_c = True
                cc = fmod(cols[i], <double>w)
                if cc < 0:
                    cc += w
                c0 = <Py_ssize_t>floor(cc)
                if c0 > w - 1:
                    c0 = w - 1
                c1 = (c0 + 1) % w
                fc = cc - c0
            else:
                inside_c = (cols[i] >= 0.0) and (cols[i] <= w - 1.0)
                cc = _clampd(cols[i], 0.0, w - 1.0)
                c0 = <Py_ssize_t>floor(cc)
                if c0 > w - 2:
                    c0 = w - 2
                if c0 < 0:
                    c0 = 0
                c1 = c0 + 1
                if c1 > w - 1:
                    c1 = w - 1
                fc = cc - c0

            w00 = (1.0 - fr) * (1.0 - fc)
            w01 = (1.0 - fr) * fc
            w10 = fr * (1.0 - fc)
            w11 = fr * fc
            dr = 0.0
            dc = 0.0
            for ch in range(c):
                g = d_out[i, ch]
                d_map[r0, c0, ch] += w00 * g
                d_map[r0, c1, ch] += w01 * g
                d_map[r1, c0, ch] += w10 * g
                d_map[r1, c1, ch] += w11 * g
                dr += g * ((fmap[r1, c0, ch] - fmap[r0, c0, ch]) * (1.0 - fc)
                           + (fmap[r1, c1, ch] - fmap[r0, c1, ch]) * fc)
                dc += g * ((fmap[r0, c1, ch] - fmap[r0, c0, ch]) * (1.0 - fr)
                           + (fmap[r1, c1, ch] - fmap[r1, c0, ch]) * fr)
            if inside_r:
                d_rows[i] = dr
            if inside_c:
                d_cols[i] = dc
    return d_map_arr, d_rows_arr, d_cols_arr


cdef inline Py_ssize_t _col_index(Py_ssize_t j, Py_ssize_t w, bint wrap_cols) nogil:
    if wrap_cols:
        if j < 0:
            return j + w
        if j >= w:
            return j - w
        return j
    return j


def depthwise3x3_fwd(double[:, :, ::1] x, double[:, :, ::1] kernel,
                     bint wrap_cols=False):
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    out_arr = np.zeros((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ki, kj, ch, ri, cj

    with nogil:
        for i in range(h):
            for ki in range(3):
                ri = i + ki - 1
                if ri < 0 or ri >= h:
                    continue
                for j in range(w):
                    for kj in range(3):
                        cj = _col_index(j + kj - 1, w, wrap_cols)
                        if cj < 0 or cj >= w:
                            continue
                        for ch in range(c):
                            out[i, j, ch] += kernel[ki, kj, ch] * x[ri, cj, ch]
    return out_arr


def depthwise3x3_bwd(double[:, :, ::1] x, double[:, :, ::1] kernel,
                     double[:, :, ::1] d_out, bint wrap_cols=False):
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    d_x_arr = np.zeros((h, w, c), dtype=np.float64)
    d_k_arr = np.zeros((3, 3, c), dtype=np.float64)
    cdef double[:, :, ::1] d_x = d_x_arr
    cdef double[:, :, ::1] d_k = d_k_arr
    cdef Py_ssize_t i, j, ki, kj, ch, ri, cj
    cdef double g

    with nogil:
        for i in range(h):
            for ki in range(3):
                ri = i + ki - 1
                if ri < 0 or ri >= h:
                    continue
                for j in range(w):
                    for kj in range(3):
                        cj = _col_index(j + kj - 1, w, wrap_cols)
                        if cj < 0 or cj >= w:
                            continue
                        for ch in range(c):
                            g = d_out[i, j, ch]
                            d_k[ki, kj, ch] += g * x[ri, cj, ch]
                            d_x[ri, cj, ch] += g * kernel[ki, kj, ch]
    return d_x_arr, d_k_arr
