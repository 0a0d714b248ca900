# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Every loop performs the same floating-point operations in the same order as
the numpy reference, so results agree bit for bit (built without FMA
contraction, see setup.py).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

OPTIMAL, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2


cdef void _pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = T.shape[0], cols = T.shape[1]
    cdef double p = T[r, c]
    cdef double f
    for j in range(cols):
        T[r, j] = T[r, j] / p
    for i in range(rows):
        if i == r:
            continue
        f = T[i, c]
        for j in range(cols):
            T[i, j] = T[i, j] - f * T[r, j]


def pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c):
    _pivot(T, r, c)


cdef Py_ssize_t _entering(double[:, ::1] T, Py_ssize_t ncols, double tol) noexcept nogil:
    cdef Py_ssize_t j, last = T.shape[0] - 1
    for j in range(ncols):
        if T[last, j] < -tol:
            return j
    return -1


def entering_column(double[:, ::1] T, Py_ssize_t ncols, double tol):
    return _entering(T, ncols, tol)


cdef Py_ssize_t _leaving(double[:, ::1] T, Py_ssize_t c, long long[::1] basis, double piv_tol) noexcept nogil:
    cdef Py_ssize_t i, m = T.shape[0] - 1, rhs = T.shape[1] - 1
    cdef Py_ssize_t best = -1
    cdef double best_ratio = 0.0, a, ratio
    for i in range(m):
        a = T[i, c]
        if a > piv_tol:
            ratio = T[i, rhs] / a
            if best < 0 or ratio < best_ratio or (ratio == best_ratio and basis[i] < basis[best]):
                best = i
                best_ratio = ratio
    return best


def leaving_row(double[:, ::1] T, Py_ssize_t c, long long[::1] basis, double piv_tol):
    return _leaving(T, c, basis, piv_tol)


def simplex_loop(double[:, ::1] T, long long[::1] basis, Py_ssize_t ncols, long max_iter, double tol, double piv_tol):
    cdef long it = 0
    cdef Py_ssize_t c, r
    with nogil:
        while True:
            c = _entering(T, ncols, tol)
            if c < 0:
                break
            if it >= max_iter:
                with gil:
                    return ITERATION_LIMIT, it
            r = _leaving(T, c, basis, piv_tol)
            if r < 0:
                with gil:
                    return UNBOUNDED, it
            _pivot(T, r, c)
            basis[r] = c
            it += 1
    return OPTIMAL, it


def echelon_rank(double[:, ::1] A, double thresh):
    cdef Py_ssize_t rows = A.shape[0], cols = A.shape[1]
    cdef Py_ssize_t rank = 0, c, i, j, k
    cdef double best, v, f, p, tmp
    for c in range(cols):
        if rank == rows:
            break
        k = rank
        best = fabs(A[rank, c])
        for i in range(rank + 1, rows):
            v = fabs(A[i, c])
            if v > best:
                best = v
                k = i
        if best <= thresh:
            continue
        if k != rank:
            for j in range(cols):
                tmp = A[rank, j]
                A[rank, j] = A[k, j]
                A[k, j] = tmp
        p = A[rank, c]
        for i in range(rank + 1, rows):
            f = A[i, c] / p
            for j in range(cols):
                A[i, j] = A[i, j] - f * A[rank, j]
        rank += 1
    return rank


def delta_dist_l1(double[::1] a, double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double quad, line
    for i in range(n):
        quad = (a[i] if a[i] > 0.0 else 0.0) + (-b[i] if -b[i] > 0.0 else 0.0)
        line = fabs(b[i])
        o[i] = quad if quad < line else line
    return out


def phi_terms(double[::1] G, double[::1] H):
    cdef Py_ssize_t i, n = G.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double lo, neg
    for i in range(n):
        neg = -H[i] if -H[i] > 0.0 else 0.0
        lo = G[i] if G[i] < H[i] else H[i]
        o[i] = neg if neg >= lo else lo
    return out


def project_omega(double[::1] y, double[::1] z):
    cdef Py_ssize_t i, n = y.shape[0]
    oy = np.empty(n)
    oz = np.empty(n)
    cdef double[::1] py = oy
    cdef double[::1] pz = oz
    cdef double qy, qz, dq, dl
    for i in range(n):
        qy = y[i] if y[i] > 0.0 else 0.0
        qz = z[i] if z[i] < 0.0 else 0.0
        dq = (y[i] - qy) * (y[i] - qy) + (z[i] - qz) * (z[i] - qz)
        dl = y[i] * y[i]
        if dl < dq:
            py[i] = 0.0
            pz[i] = z[i]
        else:
            py[i] = qy
            pz[i] = qz
    return oy, oz
