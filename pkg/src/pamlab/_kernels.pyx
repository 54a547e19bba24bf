# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: lattice heat/noise stepping and path-pair sums.

Loops over independent rows/samples run in parallel (OpenMP when the build
supports it); every reduction stays inside one sample, so results do not
depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, sqrt, asinh, floor

cnp.import_array()


def heat_step(const double[:, ::1] u, const double[:, ::1] xi, double lam, double theta,
              double var, int coupling):
    """One explicit step on a batch of periodic 1-d lattices.

    coupling 0: u' = (A u) exp(theta xi - theta^2 var / 2)
    coupling 1: u' = A u + theta u xi
    """
    cdef Py_ssize_t B = u.shape[0], n = u.shape[1], b, j, jm, jp
    cdef double c0 = 1.0 - 2.0 * lam, h = 0.5 * theta * theta * var, a
    out = np.empty((B, n))
    cdef double[:, ::1] o = out
    for b in prange(B, nogil=True, schedule="static"):
        for j in range(n):
            jm = j - 1 if j > 0 else n - 1
            jp = j + 1 if j < n - 1 else 0
            a = lam * u[b, jm] + c0 * u[b, j] + lam * u[b, jp]
            if coupling == 0:
                o[b, j] = a * exp(theta * xi[b, j] - h)
            else:
                o[b, j] = a + theta * u[b, j] * xi[b, j]
    return out


cdef inline double _radial(double r, double inv_ell, double inv_ds, const double* vals,
                           Py_ssize_t nv) noexcept nogil:
    cdef double q = asinh(r * inv_ell) * inv_ds
    cdef Py_ssize_t i = <Py_ssize_t>floor(q)
    if i >= nv - 1:
        return vals[nv - 1]
    q -= i
    return vals[i] + q * (vals[i + 1] - vals[i])


cdef inline double _pair(const double* x, const double* y, Py_ssize_t d, int mode,
                         double inv_ell, double inv_ds, const double* tables,
                         Py_ssize_t na, Py_ssize_t nv, double amp, double h) noexcept nogil:
    """Covariance of the displacement x - y (d components)."""
    cdef Py_ssize_t q
    cdef double r2 = 0.0, z, val
    if mode == 1 or na == 1:
        for q in range(d):
            z = x[q] - y[q]
            r2 += z * z
        if mode == 1:
            return amp * exp(-h * r2)
        return _radial(sqrt(r2), inv_ell, inv_ds, tables, nv)
    val = 1.0
    for q in range(d):
        z = x[q] - y[q]
        val *= _radial(z if z >= 0 else -z, inv_ell, inv_ds, tables + q * nv, nv)
    return val


def pair_double_time(const double[:, :, :, ::1] X, const double[:, ::1] W, int mode,
                     double ell, double ds, const double[:, ::1] tables,
                     double amp, double var):
    """Q[s, j, k] = sum_ab W[a, b] g(X[s, j, a] - X[s, k, b]), j <= k mirrored."""
    cdef Py_ssize_t S = X.shape[0], m = X.shape[1], n = X.shape[2], d = X.shape[3]
    cdef Py_ssize_t na = tables.shape[0], nv = tables.shape[1]
    cdef Py_ssize_t s, j, k, a, b
    cdef double acc, inv_ell = 1.0 / ell, inv_ds = 1.0 / ds, h = 0.5 / var
    cdef const double* T = &tables[0, 0]
    cdef const double* Xp = &X[0, 0, 0, 0]
    cdef const double* Wp = &W[0, 0]
    cdef const double* xa
    out = np.zeros((S, m, m))
    cdef double[:, :, ::1] Q = out
    for s in prange(S, nogil=True, schedule="static"):
        for j in range(m):
            for k in range(j, m):
                acc = 0.0
                for a in range(n):
                    xa = Xp + ((s * m + j) * n + a) * d
                    for b in range(n):
                        acc = acc + Wp[a * n + b] * _pair(
                            xa, Xp + ((s * m + k) * n + b) * d, d, mode, inv_ell, inv_ds,
                            T, na, nv, amp, h)
                Q[s, j, k] = acc
                Q[s, k, j] = acc
    return out


def pair_equal_time(const double[:, :, :, ::1] X, const double[::1] w, int mode,
                    double ell, double ds, const double[:, ::1] tables,
                    double amp, double var):
    """Q[s, j, k] = sum_i w[i] g(X[s, j, i] - X[s, k, i]) for j != k; zero diagonal."""
    cdef Py_ssize_t S = X.shape[0], m = X.shape[1], n = X.shape[2], d = X.shape[3]
    cdef Py_ssize_t na = tables.shape[0], nv = tables.shape[1]
    cdef Py_ssize_t s, j, k, i
    cdef double acc, inv_ell = 1.0 / ell, inv_ds = 1.0 / ds, h = 0.5 / var
    cdef const double* T = &tables[0, 0]
    cdef const double* Xp = &X[0, 0, 0, 0]
    out = np.zeros((S, m, m))
    cdef double[:, :, ::1] Q = out
    for s in prange(S, nogil=True, schedule="static"):
        for j in range(m):
            for k in range(j + 1, m):
                acc = 0.0
                for i in range(n):
                    acc = acc + w[i] * _pair(
                        Xp + ((s * m + j) * n + i) * d, Xp + ((s * m + k) * n + i) * d, d,
                        mode, inv_ell, inv_ds, T, na, nv, amp, h)
                Q[s, j, k] = acc
                Q[s, k, j] = acc
    return out
