# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled resampling kernels.

Mirrors :mod:`smcfilter._fallback` operation for operation; both consume
the same pre-drawn uniforms and must return identical counts.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, fabs

cnp.import_array()

cdef double SNAP = 1e-9


cdef inline double _snap(double c) nogil:
    cdef double r = floor(c + 0.5)
    if fabs(c - r) < SNAP:
        return r
    return c


cdef void _prefix(const double[:] pi, const long long[:] order, long long N,
                  double[:] out) noexcept nogil:
    # compensated running sum; out[0] = 0, out[R] = N exactly
    cdef Py_ssize_t R = pi.shape[0], i
    cdef double s = 0.0, comp = 0.0, y, t, c
    cdef double dN = <double>N
    out[0] = 0.0
    for i in range(R):
        y = pi[order[i]] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        c = _snap(dN * s)
        if c > dN:
            c = dN
        if c < out[i]:
            c = out[i]
        out[i + 1] = c
    out[R] = dN


def systematic_counts(double[:] pi, long long N, double[:] u, long long[:, :] order):
    """Counts of Whitley's systematic scheme, one row per uniform in ``u``."""
    cdef Py_ssize_t n = u.shape[0], R = pi.shape[0], i, k
    cdef cnp.ndarray[cnp.int64_t, ndim=2] counts = np.zeros((n, R), dtype=np.int64)
    cdef long long[:, :] cv = counts
    cdef double[:] c = np.empty(R + 1)
    cdef double lo, hi, uu
    with nogil:
        for i in range(n):
            _prefix(pi, order[i], N, c)
            uu = u[i]
            lo = ceil(c[0] + uu)
            for k in range(R):
                hi = ceil(c[k + 1] + uu)
                cv[i, order[i, k]] = <long long>(hi - lo)
                lo = hi
    return counts


cdef inline long long _split(long long count, double mu_l, double mu_r, double u) nogil:
    cdef double fl = floor(mu_l), fr = floor(mu_r)
    cdef double rl = mu_l - fl, rr = mu_r - fr, p
    cdef long long k, nl
    if rl > 1.0 - SNAP:
        fl += 1.0
        rl = 0.0
    elif rl < SNAP:
        rl = 0.0
    if rr > 1.0 - SNAP:
        fr += 1.0
        rr = 0.0
    elif rr < SNAP:
        rr = 0.0
    k = count - <long long>fl - <long long>fr
    if k <= 0:
        nl = <long long>fl
    elif k >= 2:
        nl = <long long>fl + 1
    else:
        if rl + rr < 1.0:
            p = rl / (rl + rr) if rl + rr > 0.0 else 0.5
        else:
            p = (1.0 - rr) / (2.0 - rl - rr)
        nl = <long long>fl + (1 if u < p else 0)
    if nl < 0:
        nl = 0
    if nl > count:
        nl = count
    return nl


def tree_counts(double[:] pi, long long N, double[:, :] u):
    """Counts of the binary-tree scheme; ``u[i]`` holds one uniform per internal node."""
    cdef Py_ssize_t n = u.shape[0], R = pi.shape[0], i, top, node
    cdef cnp.ndarray[cnp.int64_t, ndim=2] counts = np.zeros((n, R), dtype=np.int64)
    cdef long long[:, :] cv = counts
    cdef double[:] c = np.empty(R + 1)
    cdef long long[:] ident = np.arange(R, dtype=np.int64)
    cdef long long[:] st_lo = np.empty(2 * R + 2, dtype=np.int64)
    cdef long long[:] st_hi = np.empty(2 * R + 2, dtype=np.int64)
    cdef long long[:] st_n = np.empty(2 * R + 2, dtype=np.int64)
    cdef long long lo, hi, mid, cnt, nl
    _prefix(pi, ident, N, c)
    with nogil:
        for i in range(n):
            top = 0
            node = 0
            st_lo[0] = 0
            st_hi[0] = R
            st_n[0] = N
            top = 1
            while top > 0:
                top -= 1
                lo = st_lo[top]
                hi = st_hi[top]
                cnt = st_n[top]
                if hi - lo == 1:
                    cv[i, lo] = cnt
                    continue
                mid = lo + (hi - lo + 1) // 2
                nl = _split(cnt, c[mid] - c[lo], c[hi] - c[mid], u[i, node])
                node += 1
                # right pushed first so the left subtree is visited next
                st_lo[top] = mid
                st_hi[top] = hi
                st_n[top] = cnt - nl
                top += 1
                st_lo[top] = lo
                st_hi[top] = mid
                st_n[top] = nl
                top += 1
    return counts
