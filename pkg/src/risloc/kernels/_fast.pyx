# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled steering kernels; same contracts as ``_reference``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos

cnp.import_array()


def static_steering(points, elements, reference, double wavenumber):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] el = np.ascontiguousarray(elements, dtype=np.float64)
    cdef const double[::1] ref = np.ascontiguousarray(reference, dtype=np.float64)
    cdef Py_ssize_t K = pts.shape[0], M = el.shape[0], k, m
    out = np.empty((K, 2 * M), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double px, py, pz, dx, dy, dz, dr, ph
    with nogil:
        for k in range(K):
            px = pts[k, 0]
            py = pts[k, 1]
            pz = pts[k, 2]
            dx = px - ref[0]
            dy = py - ref[1]
            dz = pz - ref[2]
            dr = sqrt(dx * dx + dy * dy + dz * dz)
            for m in range(M):
                dx = px - el[m, 0]
                dy = py - el[m, 1]
                dz = pz - el[m, 2]
                ph = -wavenumber * (sqrt(dx * dx + dy * dy + dz * dz) - dr)
                o[k, 2 * m] = cos(ph)
                o[k, 2 * m + 1] = sin(ph)
    return out.view(np.complex128)


def planar_steering(directions, offsets, double wavenumber):
    cdef const double[:, ::1] dirs = np.ascontiguousarray(directions, dtype=np.float64)
    cdef const double[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef Py_ssize_t K = dirs.shape[0], M = off.shape[0], k, m
    out = np.empty((K, 2 * M), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double kx, ky, kz, ph
    with nogil:
        for k in range(K):
            kx = wavenumber * dirs[k, 0]
            ky = wavenumber * dirs[k, 1]
            kz = wavenumber * dirs[k, 2]
            for m in range(M):
                ph = off[m, 0] * kx + off[m, 1] * ky + off[m, 2] * kz
                o[k, 2 * m] = cos(ph)
                o[k, 2 * m + 1] = sin(ph)
    return out.view(np.complex128)


def mobile_response(p, v, elements, reference, weights, double wavenumber, double ts):
    # per element: a_lm = a_0m * z_m**l, advanced by complex multiplication
    cdef const double[::1] pp = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[:, ::1] el = np.ascontiguousarray(elements, dtype=np.float64)
    cdef const double[::1] ref = np.ascontiguousarray(reference, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.complex128).view(np.float64)
    cdef Py_ssize_t L = w.shape[0], M = el.shape[0], l, m
    out = np.zeros(2 * L, dtype=np.float64)
    cdef double[::1] o = out
    cdef double dx, dy, dz, d, dr, ph, step, ar, ai, zr, zi, tr, wr, wi
    with nogil:
        dx = pp[0] - ref[0]
        dy = pp[1] - ref[1]
        dz = pp[2] - ref[2]
        dr = sqrt(dx * dx + dy * dy + dz * dz)
        for m in range(M):
            dx = pp[0] - el[m, 0]
            dy = pp[1] - el[m, 1]
            dz = pp[2] - el[m, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            step = -wavenumber * ts * (dx * vv[0] + dy * vv[1] + dz * vv[2]) / d
            ph = -wavenumber * (d - dr)
            zr = cos(step)
            zi = sin(step)
            ar = cos(ph + step)
            ai = sin(ph + step)
            for l in range(L):
                wr = w[l, 2 * m]
                wi = w[l, 2 * m + 1]
                o[2 * l] += wr * ar - wi * ai
                o[2 * l + 1] += wr * ai + wi * ar
                tr = ar * zr - ai * zi
                ai = ar * zi + ai * zr
                ar = tr
    return out.view(np.complex128)
