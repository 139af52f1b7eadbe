# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import math

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, M_PI
from libc.stdint cimport uint64_t

cnp.import_array()

cdef double EARTH_RADIUS_KM = 111.32 * 180.0 / M_PI


def fnv1a64(data):
    cdef const unsigned char[::1] buf = memoryview(data).cast("B")
    cdef uint64_t h = 0xCBF29CE484222325ULL
    cdef uint64_t prime = 0x100000001B3ULL
    cdef Py_ssize_t i, n = buf.shape[0]
    with nogil:
        for i in range(n):
            h ^= buf[i]
            h *= prime
    return int(h)


cdef void _im2col3d(const double[:, :, :, :, ::1] x, double[:, :, ::1] cols,
                    int kd, int kh, int kw, int sd, int sh, int sw,
                    int od, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t n, c, a, b, e, t, r, q, row, p
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t K = kd * kh * kw
    for n in range(N):
        for c in range(C):
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        row = c * K + (a * kh + b) * kw + e
                        p = 0
                        for t in range(od):
                            for r in range(oh):
                                for q in range(ow):
                                    cols[n, row, p] = x[n, c, t * sd + a, r * sh + b, q * sw + e]
                                    p += 1


cdef void _col2im3d(const double[:, :, ::1] cols, double[:, :, :, :, ::1] x,
                    int kd, int kh, int kw, int sd, int sh, int sw,
                    int od, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t n, c, a, b, e, t, r, q, row, p
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t K = kd * kh * kw
    for n in range(N):
        for c in range(C):
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        row = c * K + (a * kh + b) * kw + e
                        p = 0
                        for t in range(od):
                            for r in range(oh):
                                for q in range(ow):
                                    x[n, c, t * sd + a, r * sh + b, q * sw + e] += cols[n, row, p]
                                    p += 1


def _as3d(shape, kernel, stride):
    if len(kernel) == 2:
        return (shape[0], shape[1], 1) + tuple(shape[2:]), (1,) + tuple(kernel), (1,) + tuple(stride)
    if len(kernel) == 3:
        return tuple(shape), tuple(kernel), tuple(stride)
    raise ValueError(f"compiled im2col supports 2 or 3 spatial dims, got kernel {kernel}")


def _out3d(shape5, kernel, stride):
    out = tuple((s - k) // st + 1 for s, k, st in zip(shape5[2:], kernel, stride))
    if any(o < 1 for o in out):
        raise ValueError(f"kernel {tuple(kernel)} larger than padded input {tuple(shape5[2:])}")
    return out


def im2col(xpad, kernel, stride):
    shape5, k, s = _as3d(xpad.shape, tuple(kernel), tuple(stride))
    od, oh, ow = _out3d(shape5, k, s)
    x5 = np.ascontiguousarray(xpad, dtype=np.float64).reshape(shape5)
    cols = np.empty((shape5[0], shape5[1] * k[0] * k[1] * k[2], od * oh * ow), dtype=np.float64)
    _im2col3d(x5, cols, k[0], k[1], k[2], s[0], s[1], s[2], od, oh, ow)
    return cols


def col2im(cols, shape, kernel, stride):
    shape5, k, s = _as3d(tuple(shape), tuple(kernel), tuple(stride))
    od, oh, ow = _out3d(shape5, k, s)
    x = np.zeros(shape5, dtype=np.float64)
    c3 = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        shape5[0], shape5[1] * k[0] * k[1] * k[2], od * oh * ow)
    _col2im3d(c3, x, k[0], k[1], k[2], s[0], s[1], s[2], od, oh, ow)
    return x.reshape(tuple(shape))


def buffer_clear(cand_lon, cand_lat, pres_lon, pres_lat, double radius_km):
    cdef double[::1] clo = np.radians(np.asarray(cand_lon, dtype=np.float64)).ravel()
    cdef double[::1] cla = np.radians(np.asarray(cand_lat, dtype=np.float64)).ravel()
    cdef double[::1] plo = np.radians(np.asarray(pres_lon, dtype=np.float64)).ravel()
    cdef double[::1] pla = np.radians(np.asarray(pres_lat, dtype=np.float64)).ravel()
    cdef double[::1] cpla = np.cos(np.radians(np.asarray(pres_lat, dtype=np.float64))).ravel()
    out = np.ones(clo.shape[0], dtype=bool)
    cdef cnp.npy_bool[::1] res = out
    cdef double limit = sin(radius_km / (2.0 * EARTH_RADIUS_KM)) ** 2
    cdef Py_ssize_t i, j, m = clo.shape[0], n = plo.shape[0]
    cdef double a, s1, s2, cl
    with nogil:
        for i in range(m):
            cl = cos(cla[i])
            for j in range(n):
                s1 = sin((pla[j] - cla[i]) * 0.5)
                s2 = sin((plo[j] - clo[i]) * 0.5)
                a = s1 * s1 + cl * cpla[j] * s2 * s2
                if not (a > limit):
                    res[i] = False
                    break
    return out
