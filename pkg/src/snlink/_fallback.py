"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` exactly and are used when the compiled
extension is unavailable or when ``SNLINK_PURE_PYTHON`` is set.
"""
import numpy as np


def se_cross(x, z, variance, lengthscale):
    """Squared-exponential cross-covariance matrix between 1-D inputs."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    d = (x[:, None] - z[None, :]) / lengthscale
    return variance * np.exp(-0.5 * d * d)


def se_predict(x, z, alpha, q, variance, lengthscale):
    """Return ``(k(x, z) @ alpha, diag(k(x, z) q k(z, x)))``.

    ``q`` may be ``None``, in which case the quadratic form is skipped and
    ``None`` is returned in its place.
    """
    k = se_cross(x, z, variance, lengthscale)
    mean = k @ alpha
    if q is None:
        return mean, None
    quad = np.einsum("ij,jk,ik->i", k, q, k)
    return mean, quad


def aggregate_power_dbm(gain_db, tx_power_dbm, mask, floor_dbm):
    """Sum linear powers over the first axis where ``mask`` is set.

    ``gain_db`` has shape (n_tx, n_rx, m); ``mask`` has shape (n_tx, n_rx).
    Returns an (n_rx, m) array in dBm, with ``floor_dbm`` where nothing
    contributes.
    """
    lin = np.where(mask[:, :, None], 10.0 ** ((tx_power_dbm + gain_db) / 10.0), 0.0)
    total = lin.sum(axis=0)
    out = np.full(total.shape, float(floor_dbm))
    pos = total > 0.0
    out[pos] = 10.0 * np.log10(total[pos])
    return out


def student_t_mc_terms(y, mu, sd, eps, nu, s2):
    """Monte-Carlo expected Student-t log-likelihood and its partial derivatives.

    With ``f = mu + sd * eps`` (``eps`` of shape (L, S)) returns
    ``(value, d/dmu (L,), d/dvar (L,), d/ds2, d/dnu)`` where ``value`` is the
    sum over points of the sample mean of ``log t(y | f, nu, sqrt(s2))``.
    """
    from scipy.special import digamma, gammaln

    n_mc = eps.shape[1]
    r = y[:, None] - (mu[:, None] + sd[:, None] * eps)
    r2 = r * r
    denom = nu * s2 + r2
    l1p = np.log1p(r2 / (nu * s2))
    const = gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi) - 0.5 * np.log(s2)
    value = y.size * const - 0.5 * (nu + 1.0) * l1p.sum() / n_mc
    gf = (nu + 1.0) * r / denom
    g_mu = gf.mean(axis=1)
    g_var = (gf * eps).mean(axis=1) / (2.0 * sd)
    ratio = r2 / denom
    g_s2 = (-0.5 * y.size + 0.5 * (nu + 1.0) * ratio.sum() / n_mc) / s2
    g_nu = (y.size * (0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu)
            + (-0.5 * l1p.sum() + 0.5 * (nu + 1.0) / nu * ratio.sum()) / n_mc)
    return float(value), g_mu, g_var, float(g_s2), float(g_nu)


def se_grad_contract(g_mu, alpha, w, cmat, a, kxz, d2):
    """Contract ``T = (g_mu alpha^T + 2 w (cmat - a)) * kxz`` against 1 and ``d2``.

    Returns ``(sum(T), sum(T * d2))``.
    """
    t = np.outer(g_mu, alpha)
    t += 2.0 * w[:, None] * (cmat - a)
    t *= kxz
    return float(t.sum()), float(np.vdot(t, d2))
