# cython: language_level=3
"""Compiled inner loops. Every function mirrors one in ``_fallback.py``.

Arithmetic is written in the same operation order as the numpy fallback so the
two backends agree bit for bit (haversine excepted: libm and numpy may differ in
the last ulp of sin/cos).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, floor

cnp.import_array()

cdef double EARTH_RADIUS_M = 6371000.0
cdef double DEG = 0.017453292519943295  # pi / 180


def haversine_many(double lat0, double lon0, const double[::1] lats, const double[::1] lons):
    cdef Py_ssize_t n = lats.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double phi0 = lat0 * DEG, lam0 = lon0 * DEG
    cdef double cphi0 = cos(phi0)
    cdef double phi, dphi, dlam, s1, s2, a
    with nogil:
        for i in range(n):
            phi = lats[i] * DEG
            dphi = phi - phi0
            dlam = lons[i] * DEG - lam0
            s1 = sin(dphi * 0.5)
            s2 = sin(dlam * 0.5)
            a = s1 * s1 + cphi0 * cos(phi) * s2 * s2
            if a > 1.0:
                a = 1.0
            elif a < 0.0:
                a = 0.0
            o[i] = 2.0 * EARTH_RADIUS_M * asin(sqrt(a))
    return out


def sqdist_block(const double[:, ::1] gallery, const double[:, ::1] queries):
    """Squared Euclidean distances, shape (n_queries, n_gallery)."""
    cdef Py_ssize_t n = gallery.shape[0], m = queries.shape[0], d = gallery.shape[1]
    cdef Py_ssize_t i, j, k
    if queries.shape[1] != d:
        raise ValueError("dimension mismatch")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double s, t
    with nogil:
        for i in range(m):
            for j in range(n):
                s = 0.0
                for k in range(d):
                    t = gallery[j, k] - queries[i, k]
                    s = s + t * t
                o[i, j] = s
    return out


def bilinear_sample_wrap(const unsigned char[:, :, ::1] img,
                         const double[:, ::1] rows,
                         const double[:, ::1] cols):
    """Bilinear lookup; rows clamp at the border, columns wrap around."""
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], C = img.shape[2]
    cdef Py_ssize_t h = rows.shape[0], w = rows.shape[1]
    cdef Py_ssize_t y, x, ch, ri0, ri1, ci0, ci1
    cdef long r0, c0
    cdef double r, c, fr, fc, top, bot, v
    if cols.shape[0] != h or cols.shape[1] != w:
        raise ValueError("rows/cols shape mismatch")
    out = np.empty((h, w, C), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] o = out
    with nogil:
        for y in range(h):
            for x in range(w):
                r = rows[y, x]
                c = cols[y, x]
                r0 = <long>floor(r)
                c0 = <long>floor(c)
                fr = r - r0
                fc = c - c0
                ri0 = r0
                ri1 = r0 + 1
                if ri0 < 0:
                    ri0 = 0
                elif ri0 > H - 1:
                    ri0 = H - 1
                if ri1 < 0:
                    ri1 = 0
                elif ri1 > H - 1:
                    ri1 = H - 1
                ci0 = ((c0 % W) + W) % W
                ci1 = (((c0 + 1) % W) + W) % W
                for ch in range(C):
                    top = img[ri0, ci0, ch] * (1.0 - fc) + img[ri0, ci1, ch] * fc
                    bot = img[ri1, ci0, ch] * (1.0 - fc) + img[ri1, ci1, ch] * fc
                    v = floor(top * (1.0 - fr) + bot * fr + 0.5)
                    if v < 0.0:
                        v = 0.0
                    elif v > 255.0:
                        v = 255.0
                    o[y, x, ch] = <unsigned char>v
    return out
