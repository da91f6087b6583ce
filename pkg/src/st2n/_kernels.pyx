# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot array kernels.

Semantics match :mod:`st2n._kernels_np` exactly, including the
bitwise-zero convention for thresholded rows.  The inner loops run
without the GIL; row counts here are in the hundreds to thousands, so
the win over NumPy comes from fusing the passes and skipping
temporaries rather than from threading.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline double _row_norm(const double[:, ::1] x, Py_ssize_t i, Py_ssize_t q) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(q):
        s += x[i, j] * x[i, j]
    return sqrt(s)


def row_norms(const double[:, ::1] x):
    cdef Py_ssize_t p = x.shape[0], q = x.shape[1], i
    out_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(p):
            out[i] = _row_norm(x, i, q)
    return out_arr


def st2n_rows(const double[:, ::1] x, double lam):
    cdef Py_ssize_t p = x.shape[0], q = x.shape[1], i, j
    out_arr = np.empty((p, q), dtype=np.float64)
    norms_arr = np.empty(p, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef double nrm, factor
    with nogil:
        for i in range(p):
            nrm = _row_norm(x, i, q)
            norms[i] = nrm
            if nrm > lam:
                factor = 1.0 - lam / nrm
                for j in range(q):
                    out[i, j] = factor * x[i, j]
            else:
                for j in range(q):
                    out[i, j] = 0.0
    return out_arr, norms_arr


def st2n_rows_var(const double[:, ::1] x, const double[::1] lams):
    cdef Py_ssize_t p = x.shape[0], q = x.shape[1], i, j
    out_arr = np.empty((p, q), dtype=np.float64)
    norms_arr = np.empty(p, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef double nrm, factor
    with nogil:
        for i in range(p):
            nrm = _row_norm(x, i, q)
            norms[i] = nrm
            if nrm > lams[i]:
                factor = 1.0 - lams[i] / nrm
                for j in range(q):
                    out[i, j] = factor * x[i, j]
            else:
                for j in range(q):
                    out[i, j] = 0.0
    return out_arr, norms_arr


def jvp_rows(
    const double[:, ::1] x,
    const double[::1] norms,
    double lam,
    const double[:, ::1] v,
):
    cdef Py_ssize_t p = x.shape[0], q = x.shape[1], i, j
    out_arr = np.empty((p, q), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double nrm, inv, factor, dot, coeff
    with nogil:
        for i in range(p):
            nrm = norms[i]
            if nrm > lam:
                inv = 1.0 / nrm
                factor = 1.0 - lam * inv
                dot = 0.0
                for j in range(q):
                    dot += x[i, j] * v[i, j]
                coeff = lam * dot * inv * inv * inv
                for j in range(q):
                    out[i, j] = factor * v[i, j] + coeff * x[i, j]
            else:
                for j in range(q):
                    out[i, j] = 0.0
    return out_arr


def double_threshold_rows(
    const double[:, ::1] bt,
    const double[:, ::1] at,
    double lam,
    double lam_g,
):
    cdef Py_ssize_t p = bt.shape[0], q = bt.shape[1], i, j
    beta_arr = np.empty((p, q), dtype=np.float64)
    u_arr = np.empty((p, q), dtype=np.float64)
    unorm_arr = np.empty(p, dtype=np.float64)
    alpha_arr = np.empty((p, q), dtype=np.float64)
    anorm_arr = np.empty(p, dtype=np.float64)
    cdef double[:, ::1] beta = beta_arr, u = u_arr, alpha = alpha_arr
    cdef double[::1] unorm = unorm_arr, anorm = anorm_arr
    cdef double nrm, factor
    with nogil:
        for i in range(p):
            nrm = _row_norm(at, i, q)
            anorm[i] = nrm
            if nrm > lam_g:
                factor = 1.0 - lam_g / nrm
                for j in range(q):
                    alpha[i, j] = factor * at[i, j]
            else:
                for j in range(q):
                    alpha[i, j] = 0.0
            for j in range(q):
                u[i, j] = bt[i, j] + alpha[i, j]
            nrm = _row_norm(u, i, q)
            unorm[i] = nrm
            if nrm > lam:
                factor = 1.0 - lam / nrm
                for j in range(q):
                    beta[i, j] = factor * u[i, j]
            else:
                for j in range(q):
                    beta[i, j] = 0.0
    return beta_arr, u_arr, unorm_arr, alpha_arr, anorm_arr


def double_threshold_backward(
    const double[:, ::1] g_beta,
    const double[:, ::1] u,
    const double[::1] u_norm,
    const double[:, ::1] at,
    const double[::1] a_norm,
    double lam,
    double lam_g,
):
    cdef Py_ssize_t p = u.shape[0], q = u.shape[1], i, j
    gu_arr = np.empty((p, q), dtype=np.float64)
    gat_arr = np.empty((p, q), dtype=np.float64)
    cdef double[:, ::1] gu = gu_arr, gat = gat_arr
    cdef double nrm, inv, factor, dot, coeff
    with nogil:
        for i in range(p):
            nrm = u_norm[i]
            if nrm > lam:
                inv = 1.0 / nrm
                factor = 1.0 - lam * inv
                dot = 0.0
                for j in range(q):
                    dot += u[i, j] * g_beta[i, j]
                coeff = lam * dot * inv * inv * inv
                for j in range(q):
                    gu[i, j] = factor * g_beta[i, j] + coeff * u[i, j]
            else:
                for j in range(q):
                    gu[i, j] = 0.0
            nrm = a_norm[i]
            if nrm > lam_g:
                inv = 1.0 / nrm
                factor = 1.0 - lam_g * inv
                dot = 0.0
                for j in range(q):
                    dot += at[i, j] * gu[i, j]
                coeff = lam_g * dot * inv * inv * inv
                for j in range(q):
                    gat[i, j] = factor * gu[i, j] + coeff * at[i, j]
            else:
                for j in range(q):
                    gat[i, j] = 0.0
    return gu_arr, gat_arr


def cd_sweep(
    const double[:, ::1] cols,
    double[::1] r,
    double[::1] w,
    double lam,
):
    cdef Py_ssize_t m = cols.shape[0], n = cols.shape[1], i, j
    cdef double max_delta = 0.0, rho, new, delta, wj
    with nogil:
        for j in range(m):
            wj = w[j]
            rho = 0.0
            for i in range(n):
                rho += cols[j, i] * r[i]
            rho = rho / n + wj
            if rho > lam:
                new = rho - lam
            elif rho < -lam:
                new = rho + lam
            else:
                new = 0.0
            delta = new - wj
            if delta != 0.0:
                for i in range(n):
                    r[i] -= delta * cols[j, i]
                w[j] = new
            if fabs(delta) > max_delta:
                max_delta = fabs(delta)
    return max_delta
