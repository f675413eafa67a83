# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled backend for the per-pixel hot loops.

Mirrors ``_core_np.py`` operation for operation; see the note there about
keeping the arithmetic order identical across both backends.
"""
from libc.math cimport floor


def inversion_fill(double[::1] lam, double[::1] p0, double[::1] u,
                   double[::1] out):
    cdef Py_ssize_t i, n = lam.shape[0]
    cdef double k, p, f, ui, li
    for i in range(n):
        li = lam[i]
        p = p0[i]
        f = p
        ui = u[i]
        k = 0.0
        while ui > f:
            k += 1.0
            p = p * (li / k)
            f = f + p
            if k >= 1000.0:
                break
        out[i] = k


def warp_bilinear(double[:, ::1] frame, double[:, ::1] u, double[:, ::1] v,
                  double[:, ::1] out, unsigned char[:, ::1] inb):
    cdef Py_ssize_t h = frame.shape[0]
    cdef Py_ssize_t w = frame.shape[1]
    cdef Py_ssize_t y, x, ix0, iy0, ix1, iy1
    cdef double sx, sy, sxc, syc, fx, fy, top, bot
    cdef double wm1 = w - 1.0
    cdef double hm1 = h - 1.0
    for y in range(h):
        for x in range(w):
            sx = x - u[y, x]
            sy = y - v[y, x]
            if sx >= 0.0 and sx <= wm1 and sy >= 0.0 and sy <= hm1:
                sxc = sx
                syc = sy
                ix0 = <Py_ssize_t>floor(sxc)
                iy0 = <Py_ssize_t>floor(syc)
                fx = sxc - floor(sxc)
                fy = syc - floor(syc)
                ix1 = ix0 + 1
                if ix1 > w - 1:
                    ix1 = w - 1
                iy1 = iy0 + 1
                if iy1 > h - 1:
                    iy1 = h - 1
                top = (1.0 - fx) * frame[iy0, ix0] + fx * frame[iy0, ix1]
                bot = (1.0 - fx) * frame[iy1, ix0] + fx * frame[iy1, ix1]
                out[y, x] = (1.0 - fy) * top + fy * bot
                inb[y, x] = 1
            else:
                out[y, x] = 0.0
                inb[y, x] = 0
