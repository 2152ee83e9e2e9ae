# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels.  Same arithmetic as ``_reference.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, sqrt, INFINITY, fabs

cnp.import_array()


def cast_rays(origin, dirs, v0, v1, v2):
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef double[:, ::1] p0 = np.ascontiguousarray(np.asarray(v0, dtype=np.float64).reshape(-1, 3))
    cdef double[:, ::1] p1 = np.ascontiguousarray(np.asarray(v1, dtype=np.float64).reshape(-1, 3))
    cdef double[:, ::1] p2 = np.ascontiguousarray(np.asarray(v2, dtype=np.float64).reshape(-1, 3))
    cdef Py_ssize_t nrays = d.shape[0], ntri = p0.shape[0], r, t
    out = np.full(nrays, np.inf)
    cdef double[::1] depth = out
    cdef int kx, ky, kz, tmp
    cdef double sx, sy, sz, dz, best
    cdef double a[3]
    cdef double b[3]
    cdef double c[3]
    cdef double ax, ay, bx, by, cx, cy, az, bz, cz, u, v, w, det, tnum, hit
    cdef int q

    with nogil:
        for r in range(nrays):
            kz = 0
            if fabs(d[r, 1]) > fabs(d[r, kz]):
                kz = 1
            if fabs(d[r, 2]) > fabs(d[r, kz]):
                kz = 2
            kx = (kz + 1) % 3
            ky = (kx + 1) % 3
            if d[r, kz] < 0.0:
                tmp = kx
                kx = ky
                ky = tmp
            dz = d[r, kz]
            sx = d[r, kx] / dz
            sy = d[r, ky] / dz
            sz = 1.0 / dz
            best = INFINITY
            for t in range(ntri):
                for q in range(3):
                    a[q] = p0[t, q] - o[q]
                    b[q] = p1[t, q] - o[q]
                    c[q] = p2[t, q] - o[q]
                az = a[kz]
                bz = b[kz]
                cz = c[kz]
                ax = a[kx] - sx * az
                ay = a[ky] - sy * az
                bx = b[kx] - sx * bz
                by = b[ky] - sy * bz
                cx = c[kx] - sx * cz
                cy = c[ky] - sy * cz
                u = cx * by - cy * bx
                v = ax * cy - ay * cx
                w = bx * ay - by * ax
                if (u < 0 or v < 0 or w < 0) and (u > 0 or v > 0 or w > 0):
                    continue
                det = u + v + w
                if det == 0.0:
                    continue
                tnum = u * (sz * az) + v * (sz * bz) + w * (sz * cz)
                if det > 0.0:
                    if not tnum > 0.0:
                        continue
                elif not tnum < 0.0:
                    continue
                hit = tnum / det
                if hit < best:
                    best = hit
            depth[r] = best
    return out


cdef inline Py_ssize_t _cell(double x, Py_ssize_t n) nogil:
    if x < -0.5 or x > 0.5:
        return -1
    cdef Py_ssize_t i = <Py_ssize_t>floor((x + 0.5) * n)
    return n - 1 if i >= n else i


def sample_triangles(v0, v1, v2, Py_ssize_t n, double pitch):
    cdef double[:, ::1] p0 = np.ascontiguousarray(np.asarray(v0, dtype=np.float64).reshape(-1, 3))
    cdef double[:, ::1] p1 = np.ascontiguousarray(np.asarray(v1, dtype=np.float64).reshape(-1, 3))
    cdef double[:, ::1] p2 = np.ascontiguousarray(np.asarray(v2, dtype=np.float64).reshape(-1, 3))
    out = np.zeros((n, n, n), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] grid = out
    cdef Py_ssize_t ntri = p0.shape[0], t, i, j, k, ix, iy, iz
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double l1, l2, l3, longest, fi, fj, x, y, z
    cdef int q

    with nogil:
        for t in range(ntri):
            for q in range(3):
                e1[q] = p1[t, q] - p0[t, q]
                e2[q] = p2[t, q] - p0[t, q]
                e3[q] = p2[t, q] - p1[t, q]
            l1 = sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
            l2 = sqrt(e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2])
            l3 = sqrt(e3[0] * e3[0] + e3[1] * e3[1] + e3[2] * e3[2])
            longest = l1
            if l2 > longest:
                longest = l2
            if l3 > longest:
                longest = l3
            k = <Py_ssize_t>ceil(longest / pitch)
            if k < 1:
                k = 1
            for i in range(k + 1):
                fi = <double>i / <double>k
                for j in range(k + 1 - i):
                    fj = <double>j / <double>k
                    x = p0[t, 0] + fi * e1[0] + fj * e2[0]
                    y = p0[t, 1] + fi * e1[1] + fj * e2[1]
                    z = p0[t, 2] + fi * e1[2] + fj * e2[2]
                    ix = _cell(x, n)
                    iy = _cell(y, n)
                    iz = _cell(z, n)
                    if ix >= 0 and iy >= 0 and iz >= 0:
                        grid[ix, iy, iz] = 1
    return out
