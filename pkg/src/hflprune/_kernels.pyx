# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of ``hflprune._pure``."""
import numpy as np

from libc.math cimport sqrt, fabs


def masked_average(stack, masks, previous):
    cdef const double[:, ::1] w = np.ascontiguousarray(stack, dtype=np.float64)
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(masks, dtype=np.uint8)
    out_arr = np.array(previous, dtype=np.float64, copy=True)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    cdef long count
    if m.shape[0] != rows or m.shape[1] != cols or out.shape[0] != cols:
        raise ValueError("stack, masks and previous are not aligned")
    for j in range(cols):
        acc = 0.0
        count = 0
        for i in range(rows):
            if m[i, j]:
                acc = acc + w[i, j]
                count += 1
        if count > 0:
            out[j] = acc / <double>count
    return out_arr


cdef double _bandwidth_sum(const double[::1] coef, const double[::1] snr, const double[::1] v3,
                           const double[::1] v4, double lam) noexcept nogil:
    cdef Py_ssize_t i
    cdef double total = 0.0, b
    for i in range(coef.shape[0]):
        if coef[i] > 0.0:
            b = (sqrt(coef[i] * snr[i] / lam) - v4[i]) / (v3[i] * snr[i])
            if b < 0.0:
                b = 0.0
            elif b > 1.0:
                b = 1.0
            total += b
    return total


def bandwidth_fractions(coef, snr, v3, v4, double lam):
    cdef const double[::1] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[::1] s = np.ascontiguousarray(snr, dtype=np.float64)
    cdef const double[::1] a = np.ascontiguousarray(v3, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(v4, dtype=np.float64)
    out_arr = np.zeros(c.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double b
    for i in range(c.shape[0]):
        if c[i] > 0.0:
            b = (sqrt(c[i] * s[i] / lam) - d[i]) / (a[i] * s[i])
            if b < 0.0:
                b = 0.0
            elif b > 1.0:
                b = 1.0
            out[i] = b
    return out_arr


def bandwidth_sum(coef, snr, v3, v4, double lam):
    return _bandwidth_sum(np.ascontiguousarray(coef, dtype=np.float64),
                          np.ascontiguousarray(snr, dtype=np.float64),
                          np.ascontiguousarray(v3, dtype=np.float64),
                          np.ascontiguousarray(v4, dtype=np.float64), lam)


def bisect_lambda(coef, snr, v3, v4, double tol=1e-9, int max_iter=200):
    cdef const double[::1] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[::1] s = np.ascontiguousarray(snr, dtype=np.float64)
    cdef const double[::1] a = np.ascontiguousarray(v3, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(v4, dtype=np.float64)
    cdef Py_ssize_t i, positive = 0
    cdef int it, k
    cdef double lo = 1.0, hi = 1.0, mid, total
    for i in range(c.shape[0]):
        if c[i] > 0.0:
            positive += 1
    if positive <= 1:
        return 0.0, 0, True

    if _bandwidth_sum(c, s, a, d, 1.0) >= 1.0:
        for k in range(2100):
            hi *= 4.0
            if _bandwidth_sum(c, s, a, d, hi) < 1.0:
                break
        lo = hi / 4.0
    else:
        for k in range(2100):
            lo /= 4.0
            if _bandwidth_sum(c, s, a, d, lo) >= 1.0:
                break
        hi = lo * 4.0

    mid = sqrt(lo * hi)
    for it in range(1, max_iter + 1):
        mid = sqrt(lo * hi)
        total = _bandwidth_sum(c, s, a, d, mid)
        if fabs(total - 1.0) < tol:
            return mid, it, True
        if total > 1.0:
            lo = mid
        else:
            hi = mid
    return mid, max_iter, False
