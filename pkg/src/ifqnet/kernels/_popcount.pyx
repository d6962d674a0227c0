# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Popcount kernels for binary convolution over bit-plane packed codes."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef extern from *:
    """
    static inline int ifq_popcount64(unsigned long long v) { return __builtin_popcountll(v); }
    """
    int ifq_popcount64(unsigned long long v) nogil


def binary_conv(const uint64_t[:, ::1] w, const uint64_t[:, :, ::1] planes):
    """s[c, p] = sum_t 2^t (2 popcount(w_c & x_tp) - popcount(x_tp))."""
    cdef Py_ssize_t nc = w.shape[0], nw = w.shape[1]
    cdef Py_ssize_t k = planes.shape[0], npos = planes.shape[1]
    if planes.shape[2] != nw:
        raise ValueError("weight and activation word counts differ")
    out = np.zeros((nc, npos), dtype=np.int64)
    cdef int64_t[:, ::1] s = out
    xcount = np.zeros((k, npos), dtype=np.int64)
    cdef int64_t[:, ::1] xc = xcount
    cdef Py_ssize_t c, p, t, j
    cdef int64_t acc, total
    with nogil:
        for t in range(k):
            for p in range(npos):
                acc = 0
                for j in range(nw):
                    acc += ifq_popcount64(planes[t, p, j])
                xc[t, p] = acc
        for c in range(nc):
            for p in range(npos):
                total = 0
                for t in range(k):
                    acc = 0
                    for j in range(nw):
                        acc += ifq_popcount64(w[c, j] & planes[t, p, j])
                    total += (2 * acc - xc[t, p]) << t
                s[c, p] = total
    return out


def threshold_codes(const int64_t[:, ::1] s, const int64_t[:, ::1] thr):
    """codes[c, p] = number of thresholds of channel c strictly below s[c, p]."""
    cdef Py_ssize_t nc = s.shape[0], npos = s.shape[1], nl = thr.shape[1]
    if thr.shape[0] != nc:
        raise ValueError("threshold rows must match channels")
    out = np.zeros((nc, npos), dtype=np.int64)
    cdef int64_t[:, ::1] codes = out
    cdef Py_ssize_t c, p, i
    cdef int64_t v, n
    with nogil:
        for c in range(nc):
            for p in range(npos):
                v = s[c, p]
                n = 0
                for i in range(nl):
                    if v > thr[c, i]:
                        n += 1
                    else:
                        break
                codes[c, p] = n
    return out
