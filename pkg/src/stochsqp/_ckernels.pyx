# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; see ``_pykernels`` for the contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp

cnp.import_array()

cdef double ROUNDOFF = 10.0 * 2.220446049250313e-16


cdef inline double _dot(const double[::1] a, const double[::1] b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef inline void _matvec(const double[:, ::1] A, const double[::1] x, double[::1] out) noexcept nogil:
    # out = A @ x
    cdef Py_ssize_t i, j
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += A[i, j] * x[j]
        out[i] = s


cdef inline void _rmatvec(const double[:, ::1] A, const double[::1] x, double[::1] out) noexcept nogil:
    # out = A.T @ x
    cdef Py_ssize_t i, j
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef double xi
    for j in range(n):
        out[j] = 0.0
    for i in range(m):
        xi = x[i]
        for j in range(n):
            out[j] += A[i, j] * xi


cdef inline void _project(const double[:, ::1] Q, const double[::1] w,
                          double[::1] tmp, double[::1] out) noexcept nogil:
    # out = w - Q (Q^T w); Q is n x r
    cdef Py_ssize_t n = Q.shape[0], r = Q.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(r):
        s = 0.0
        for i in range(n):
            s += Q[i, j] * w[i]
        tmp[j] = s
    for i in range(n):
        s = w[i]
        for j in range(r):
            s -= Q[i, j] * tmp[j]
        out[i] = s


def normal_cg(const double[:, ::1] J, const double[::1] c, double radius,
              int max_iter, double rtol):
    cdef Py_ssize_t m = J.shape[0], n = J.shape[1]
    cdef Py_ssize_t i
    v_arr = np.zeros(n)
    cdef double[::1] v = v_arr
    cdef double[::1] r = np.empty(m)
    cdef double[::1] s = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(m)
    cdef double gamma, gamma_new, qq, alpha, limit, stop, t
    cdef double pp, vp, vv, disc, trial_sq, floor
    cdef int it = 0

    for i in range(m):
        r[i] = -c[i]
    _rmatvec(J, r, s)
    gamma = _dot(s, s, n)
    if gamma == 0.0 or max_iter < 1:
        return v_arr, 0
    stop = rtol * sqrt(gamma)
    floor = 0.0
    for i in range(m):
        floor += _dot(J[i], J[i], n)
    floor = ROUNDOFF * sqrt(floor)
    for i in range(n):
        p[i] = s[i]
    while it < max_iter:
        it += 1
        _matvec(J, p, q)
        qq = _dot(q, q, m)
        if qq == 0.0:
            break
        alpha = gamma / qq
        if it == 1:
            limit = radius / sqrt(gamma)
            if alpha >= limit:
                for i in range(n):
                    v[i] += limit * p[i]
                break
        else:
            trial_sq = 0.0
            for i in range(n):
                t = v[i] + alpha * p[i]
                trial_sq += t * t
            if trial_sq >= radius * radius:
                pp = _dot(p, p, n)
                vp = _dot(v, p, n)
                vv = _dot(v, v, n)
                disc = vp * vp + pp * (radius * radius - vv)
                if disc < 0.0:
                    disc = 0.0
                t = (-vp + sqrt(disc)) / pp
                for i in range(n):
                    v[i] += t * p[i]
                break
        for i in range(n):
            v[i] += alpha * p[i]
        for i in range(m):
            r[i] -= alpha * q[i]
        _rmatvec(J, r, s)
        gamma_new = _dot(s, s, n)
        t = floor * sqrt(_dot(r, r, m))
        if sqrt(gamma_new) <= (stop if stop > t else t):
            break
        for i in range(n):
            p[i] = s[i] + (gamma_new / gamma) * p[i]
        gamma = gamma_new
    return v_arr, it


def projected_cg(H, const double[:, ::1] Q, const double[::1] rhs,
                 double rtol, int max_iter):
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t i
    cdef bint identity = H is None
    cdef const double[:, ::1] Hm
    if not identity:
        Hm = np.ascontiguousarray(H, dtype=np.float64)
    u_arr = np.zeros(n)
    cdef double[::1] u = u_arr
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] Hp = np.empty(n)
    cdef double[::1] tmp = np.empty(max(Q.shape[1], 1))
    cdef double[::1] uproj = np.empty(n)
    cdef double rz, rz_new, res, stop, pHp, alpha, beta
    cdef int it = 0

    for i in range(n):
        r[i] = rhs[i]
    _project(Q, r, tmp, z)
    for i in range(n):
        r[i] = z[i]
    rz = _dot(z, z, n)
    res = sqrt(rz) if rz > 0.0 else 0.0
    stop = rtol * (res if res > 1.0 else 1.0)
    if res <= stop:
        return u_arr, 0, res
    for i in range(n):
        p[i] = -z[i]
    while it < max_iter:
        it += 1
        if identity:
            for i in range(n):
                Hp[i] = p[i]
        else:
            _matvec(Hm, p, Hp)
        pHp = _dot(p, Hp, n)
        if pHp <= 0.0:
            raise ArithmeticError("nonpositive curvature on Null(J)")
        alpha = rz / pHp
        for i in range(n):
            u[i] += alpha * p[i]
            r[i] += alpha * Hp[i]
        # keep only the projected residual; the rest belongs to J^T y
        _project(Q, r, tmp, z)
        for i in range(n):
            r[i] = z[i]
        rz_new = _dot(z, z, n)
        res = sqrt(rz_new) if rz_new > 0.0 else 0.0
        if res <= stop:
            break
        beta = rz_new / rz
        for i in range(n):
            p[i] = -z[i] + beta * p[i]
        rz = rz_new
    _project(Q, u, tmp, uproj)
    return np.asarray(uproj).copy(), it, res


def logistic_grad_rows(const double[:, ::1] X, const double[::1] y,
                       const double[::1] w, const cnp.intp_t[::1] rows):
    cdef Py_ssize_t n = X.shape[1], b = rows.shape[0]
    cdef Py_ssize_t k, j, row
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double z, t, sig, coef
    for k in range(b):
        row = rows[k]
        z = 0.0
        for j in range(n):
            z += X[row, j] * w[j]
        t = -y[row] * z
        if t >= 0.0:
            sig = 1.0 / (1.0 + exp(-t))
        else:
            sig = exp(t)
            sig = sig / (1.0 + sig)
        coef = -y[row] * sig
        for j in range(n):
            out[j] += coef * X[row, j]
    for j in range(n):
        out[j] /= b
    return out_arr
