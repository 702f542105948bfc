# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log10, pow

cnp.import_array()


def se_cross(x, z, double variance, double lengthscale):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], e = zv.shape[0], i, j
    out = np.empty((n, e), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double inv = 1.0 / lengthscale, d
    for i in range(n):
        for j in range(e):
            d = (xv[i] - zv[j]) * inv
            ov[i, j] = variance * exp(-0.5 * d * d)
    return out


def se_predict(x, z, alpha, q, double variance, double lengthscale):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], e = zv.shape[0], i, j, l
    cdef double inv = 1.0 / lengthscale, d, acc, row
    cdef double[::1] kv = np.empty(e, dtype=np.float64)
    cdef const double[:, ::1] qv
    cdef bint with_q = q is not None
    mean = np.empty(n, dtype=np.float64)
    cdef double[::1] mv = mean
    cdef double[::1] quadv
    quad = None
    if with_q:
        qv = np.ascontiguousarray(q, dtype=np.float64)
        quad = np.empty(n, dtype=np.float64)
        quadv = quad
    for i in range(n):
        acc = 0.0
        for j in range(e):
            d = (xv[i] - zv[j]) * inv
            kv[j] = variance * exp(-0.5 * d * d)
            acc += kv[j] * av[j]
        mv[i] = acc
        if with_q:
            acc = 0.0
            for j in range(e):
                if kv[j] == 0.0:
                    continue
                row = 0.0
                for l in range(e):
                    row += qv[j, l] * kv[l]
                acc += kv[j] * row
            quadv[i] = acc
    return mean, quad


def aggregate_power_dbm(gain_db, double tx_power_dbm, mask, double floor_dbm):
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(gain_db, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t nt = gv.shape[0], nr = gv.shape[1], m = gv.shape[2], a, b, c
    out = np.empty((nr, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double total
    for b in range(nr):
        for c in range(m):
            total = 0.0
            for a in range(nt):
                if mv[a, b]:
                    total += pow(10.0, (tx_power_dbm + gv[a, b, c]) / 10.0)
            ov[b, c] = 10.0 * log10(total) if total > 0.0 else floor_dbm
    return out


from libc.math cimport log, log1p, lgamma, M_PI
from scipy.special import digamma as _digamma


def student_t_mc_terms(y, mu, sd, eps, double nu, double s2):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(sd, dtype=np.float64)
    cdef const double[:, ::1] ev = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], s = ev.shape[1], i, j
    g_mu = np.empty(n, dtype=np.float64)
    g_var = np.empty(n, dtype=np.float64)
    cdef double[::1] gmv = g_mu, gvv = g_var
    cdef double inv_mc = 1.0 / s, nus2 = nu * s2
    cdef double r, r2, den, gf, acc_mu, acc_var, sum_l1p = 0.0, sum_ratio = 0.0
    for i in range(n):
        acc_mu = 0.0
        acc_var = 0.0
        for j in range(s):
            r = yv[i] - (mv[i] + sv[i] * ev[i, j])
            r2 = r * r
            den = nus2 + r2
            gf = (nu + 1.0) * r / den
            acc_mu += gf
            acc_var += gf * ev[i, j]
            sum_l1p += log1p(r2 / nus2)
            sum_ratio += r2 / den
        gmv[i] = acc_mu * inv_mc
        gvv[i] = acc_var * inv_mc / (2.0 * sv[i])
    cdef double const = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(nu * M_PI) - 0.5 * log(s2)
    value = n * const - 0.5 * (nu + 1.0) * sum_l1p * inv_mc
    g_s2 = (-0.5 * n + 0.5 * (nu + 1.0) * sum_ratio * inv_mc) / s2
    dg = float(_digamma(0.5 * (nu + 1.0)) - _digamma(0.5 * nu))
    g_nu = n * (0.5 * dg - 0.5 / nu) + (-0.5 * sum_l1p + 0.5 * (nu + 1.0) / nu * sum_ratio) * inv_mc
    return value, g_mu, g_var, g_s2, g_nu


def se_grad_contract(g_mu, alpha, w, cmat, a, kxz, d2):
    cdef const double[::1] gv = np.ascontiguousarray(g_mu, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(cmat, dtype=np.float64)
    cdef const double[:, ::1] amat = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] kv = np.ascontiguousarray(kxz, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(d2, dtype=np.float64)
    cdef Py_ssize_t n = kv.shape[0], e = kv.shape[1], i, j
    cdef double tot = 0.0, totd = 0.0, t, gi, wi
    for i in range(n):
        gi = gv[i]
        wi = 2.0 * wv[i]
        for j in range(e):
            t = (gi * av[j] + wi * (cv[i, j] - amat[i, j])) * kv[i, j]
            tot += t
            totd += t * dv[i, j]
    return tot, totd
