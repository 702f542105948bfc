"""Sparse Student-t process regression (SPTPR) for scalar inputs.

A model holds ``L_E`` inducing inputs ``Z`` and a Gaussian variational
distribution ``g(f_Z) = N(m, S)`` with ``S = L L^T``.  Predictions use the
Student-t conditional given the inducing values,

    mean  = k(x, Z) B^-1 m,                 B = K(Z, Z) + sigma^2 I
    Xi    = k(x, x) - k(x, Z) B^-1 k(Z, x) + k(x, Z) B^-1 S B^-1 k(Z, x)
    scale = Xi * (nu + eta - 2) / (nu + L_E - 2),   eta = m^T B^-1 m
    dof   = nu + L_E

and training maximises a reparameterised Monte-Carlo ELBO with a Student-t
likelihood of scale ``sigma`` and ``nu`` degrees of freedom.  All gradients
are analytic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln

from . import _backend
from .errors import ConfigurationError, ContractViolation, NumericalError

FORMAT = "snlink.sptpr"
FORMAT_VERSION = 1
XI_FLOOR = 1e-10  # latent variance floor, relative to the kernel variance


@dataclass(frozen=True)
class KernelParams:
    variance: float = 1.0
    lengthscale: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if not (self.variance > 0 and self.lengthscale > 0 and self.jitter > 0):
            raise ConfigurationError(f"kernel parameters must be positive: {self}")


@dataclass(frozen=True)
class StudentTPosterior:
    mean: float | np.ndarray
    scale: float | np.ndarray
    nu: float

    @property
    def variance(self):
        """Second central moment ``nu * scale / (nu - 2)``."""
        return self.nu * np.asarray(self.scale) / (self.nu - 2.0)


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float).ravel()
        y = np.asarray(self.targets, dtype=float).ravel()
        if x.shape != y.shape:
            raise ContractViolation(f"inputs {x.shape} and targets {y.shape} differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ContractViolation("training data must be finite")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.size


def kernel_eval(x, x2, params: KernelParams):
    d = (np.asarray(x, float) - np.asarray(x2, float)) / params.lengthscale
    return params.variance * np.exp(-0.5 * d * d)


def student_t_logpdf(y, f, nu, theta):
    """Log density of a location-scale Student-t (scale ``theta``, not squared)."""
    r = (np.asarray(y, float) - np.asarray(f, float)) / theta
    return (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
            - np.log(theta) - 0.5 * (nu + 1.0) * np.log1p(r * r / nu))


@dataclass(frozen=True, eq=False)
class SptprModel:
    inducing_inputs: np.ndarray
    variational_mean: np.ndarray
    variational_cov_factor: np.ndarray
    kernel: KernelParams
    nu: float
    noise_var: float
    elbo_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        z = np.asarray(self.inducing_inputs, float).ravel()
        m = np.asarray(self.variational_mean, float).ravel()
        lf = np.tril(np.asarray(self.variational_cov_factor, float))
        if z.size < 1:
            raise ConfigurationError("at least one inducing point is required")
        if m.shape != z.shape or lf.shape != (z.size, z.size):
            raise ConfigurationError("inconsistent inducing / variational shapes")
        if not np.all(np.diag(lf) > 0):
            raise ConfigurationError("variational covariance factor needs a positive diagonal")
        if not self.nu > 2:
            raise ConfigurationError(f"nu must exceed 2, got {self.nu}")
        if not self.noise_var > 0:
            raise ConfigurationError("noise_var must be positive")
        for name, v in (("inducing_inputs", z), ("variational_mean", m), ("variational_cov_factor", lf)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n_inducing(self) -> int:
        return self.inducing_inputs.size

    @cached_property
    def _predictor(self):
        z, k = self.inducing_inputs, self.kernel
        kzz = _backend.se_cross(z, z, k.variance, k.lengthscale) + k.jitter * np.eye(z.size)
        b = kzz + self.noise_var * np.eye(z.size)
        try:
            cb = linalg.cho_factor(b, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("K(Z,Z) + noise_var*I is not positive definite") from exc
        binv = linalg.cho_solve(cb, np.eye(z.size))
        alpha = binv @ self.variational_mean
        eta = float(self.variational_mean @ alpha)
        w = binv @ self.variational_cov_factor
        q = binv - w @ w.T
        c = (self.nu + eta - 2.0) / (self.nu + z.size - 2.0)
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(q))):
            raise NumericalError("non-finite predictor terms")
        return alpha, np.ascontiguousarray(q), eta, c

    @property
    def eta(self) -> float:
        return self._predictor[2]

    def predict(self, x, with_scale: bool = True):
        """Vectorised ``(mean, scale)`` at inputs ``x``; scale is ``None`` if not requested."""
        alpha, q, _, c = self._predictor
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        k = self.kernel
        mean, quad = _backend.se_predict(xs, self.inducing_inputs, alpha, q if with_scale else None,
                                         k.variance, k.lengthscale)
        if not with_scale:
            return mean, None
        xi = np.maximum(k.variance - quad, XI_FLOOR * k.variance)
        return mean, c * xi

    def mean(self, x):
        return self.predict(x, with_scale=False)[0]

    @property
    def nu_out(self) -> float:
        return self.nu + self.n_inducing

    def likelihood_variance(self) -> float:
        """Variance of the Student-t observation noise."""
        return self.noise_var * self.nu / (self.nu - 2.0)

    def predictive_second_moment(self, x, include_noise: bool = True):
        """Variance of the latent (and optionally observed) value at ``x``."""
        _, scale = self.predict(x)
        v = scale * self.nu_out / (self.nu_out - 2.0)
        return v + self.likelihood_variance() if include_noise else v

    # persistence -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kernel": {"variance": self.kernel.variance, "lengthscale": self.kernel.lengthscale,
                       "jitter": self.kernel.jitter},
            "nu": self.nu,
            "noise_var": self.noise_var,
            "inducing_inputs": self.inducing_inputs.tolist(),
            "variational_mean": self.variational_mean.tolist(),
            "variational_cov_factor": [row[: i + 1] for i, row in enumerate(self.variational_cov_factor.tolist())],
            "elbo_trace": list(self.elbo_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SptprModel":
        if d.get("format") != FORMAT:
            raise ContractViolation(f"not an SPTPR model file (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise ContractViolation(f"unsupported model version {d.get('version')!r}")
        n = len(d["inducing_inputs"])
        lf = np.zeros((n, n))
        for i, row in enumerate(d["variational_cov_factor"]):
            lf[i, : i + 1] = row
        return cls(np.array(d["inducing_inputs"], float), np.array(d["variational_mean"], float), lf,
                   KernelParams(**d["kernel"]), float(d["nu"]), float(d["noise_var"]),
                   tuple(d.get("elbo_trace", ())))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SptprModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def same_parameters(self, other: "SptprModel") -> bool:
        return (self.kernel == other.kernel and self.nu == other.nu and self.noise_var == other.noise_var
                and np.array_equal(self.inducing_inputs, other.inducing_inputs)
                and np.array_equal(self.variational_mean, other.variational_mean)
                and np.array_equal(self.variational_cov_factor, other.variational_cov_factor))


def sparse_conditional(model: SptprModel, x_star) -> StudentTPosterior:
    mean, scale = model.predict(x_star)
    if np.ndim(x_star) == 0:
        mean, scale = float(mean[0]), float(scale[0])
    return StudentTPosterior(mean, scale, model.nu_out)


def interpolating_model(data: TrainingSet, kernel: KernelParams, noise_var: float, nu: float,
                        cov_scale: float = 1e-9) -> SptprModel:
    """Model with one inducing point per sample and the targets as variational mean.

    Its predictive mean and latent variance coincide with the exact Student-t
    (and, as ``nu`` grows, Gaussian) process posterior given the data.
    """
    n = len(data)
    return SptprModel(data.inputs.copy(), data.targets.copy(), cov_scale * np.eye(n), kernel, nu, noise_var)


# ---------------------------------------------------------------------------
# ELBO and its gradient

def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    y = np.asarray(y, float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


class _Layout:
    """Flat unconstrained parameter vector: 4 hyper raws, m, lower-tri factor."""

    def __init__(self, n_inducing: int):
        self.e = n_inducing
        self.tril = np.tril_indices(n_inducing)
        self.diag_pos = np.flatnonzero(self.tril[0] == self.tril[1])
        self.size = 4 + n_inducing + self.tril[0].size

    def pack(self, v, ell, s2, nu, m, lf):
        raw_l = lf[self.tril].copy()
        raw_l[self.diag_pos] = np.log(np.diag(lf))
        return np.concatenate([_softplus_inv([v, ell, s2, nu - 2.0]), m, raw_l])

    def unpack(self, theta):
        e = self.e
        v, ell, s2, nu_m2 = _softplus(theta[:4])
        m = theta[4:4 + e]
        raw_l = theta[4 + e:]
        lf = np.zeros((e, e))
        vals = raw_l.copy()
        vals[self.diag_pos] = np.exp(raw_l[self.diag_pos])
        lf[self.tril] = vals
        return v, ell, s2, nu_m2 + 2.0, m, lf


class _Elbo:
    """Deterministic ELBO for fixed base draws ``eps`` (shape (L, n_mc))."""

    def __init__(self, data: TrainingSet, z: np.ndarray, jitter: float, eps: np.ndarray,
                 learn_nu: bool = False):
        self.x, self.y = data.inputs, data.targets
        self.z = np.asarray(z, float)
        self.jitter = jitter
        self.eps = eps
        self.learn_nu = learn_nu
        self.layout = _Layout(self.z.size)
        self.dzz2 = (self.z[:, None] - self.z[None, :]) ** 2
        self.dxz2 = (self.x[:, None] - self.z[None, :]) ** 2

    # -- forward pieces, kept separate so tests can check each gradient ----
    def forward(self, theta):
        v, ell, s2, nu, m, lf = self.layout.unpack(theta)
        e = self.z.size
        c = {"theta": theta, "v": v, "ell": ell, "s2": s2, "nu": nu, "m": m, "lf": lf}
        rzz = np.exp(self.dzz2 * (-0.5 / ell**2))
        rxz = np.exp(self.dxz2 * (-0.5 / ell**2))
        kzz = v * rzz + self.jitter * np.eye(e)
        b = kzz + s2 * np.eye(e)
        try:
            cb = linalg.cho_factor(b, lower=True)
            ck = linalg.cho_factor(kzz, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("kernel matrix lost positive definiteness during training") from exc
        binv = linalg.cho_solve(cb, np.eye(e))
        kxz = v * rxz
        alpha = binv @ m
        eta = float(m @ alpha)
        a = kxz @ binv
        p = a @ lf
        xi = v - np.einsum("ij,ij->i", a, kxz) + np.einsum("ij,ij->i", p, p)
        # cancellation can push the latent variance below zero; floor it and
        # treat floored entries as constants in the backward pass
        floor = XI_FLOOR * v
        live = xi > floor
        xi = np.where(live, xi, floor)
        nup = nu + e
        rr = nup / (nup - 2.0)
        cf = (nu + eta - 2.0) / (nu + e - 2.0)
        c.update(live=live, rzz=rzz, rxz=rxz, kzz=kzz, binv=binv, ck=ck, kxz=kxz, alpha=alpha, eta=eta, a=a, p=p,
                 xi=xi, rr=rr, cf=cf, mu=a @ m, var=cf * rr * xi)
        return c

    def kl(self, c):
        e = self.z.size
        ck, m, lf = c["ck"], c["m"], c["lf"]
        half = linalg.solve_triangular(ck[0], lf, lower=True)
        beta = linalg.cho_solve(ck, m)
        logdet_k = 2.0 * np.sum(np.log(np.diag(ck[0])))
        logdet_s = 2.0 * np.sum(np.log(np.diag(lf)))
        c["beta"] = beta
        return 0.5 * (np.sum(half * half) + m @ beta - e + logdet_k - logdet_s)

    def expected_loglik(self, c):
        sd = np.sqrt(c["var"])
        out = _backend.student_t_mc_terms(self.y, c["mu"], sd, self.eps, c["nu"], c["s2"])
        c["lik_terms"] = out
        return out[0]

    def value(self, theta):
        c = self.forward(theta)
        return self.expected_loglik(c) - self.kl(c)

    # -- backward -----------------------------------------------------------
    def conditional_grad(self, c, g_mu, g_var, g_eta=0.0):
        """Gradient of ``g_mu.mu + g_var.var + g_eta*eta`` w.r.t. (v, ell, s2, nu, m, lf)."""
        v, ell, nu, m, lf = c["v"], c["ell"], c["nu"], c["m"], c["lf"]
        a, p, binv, alpha, kxz, xi = c["a"], c["p"], c["binv"], c["alpha"], c["kxz"], c["xi"]
        e = self.z.size
        rr, cf, eta = c["rr"], c["cf"], c["eta"]
        w = np.where(c["live"], g_var * cf * rr, 0.0)  # d/d xi
        g_cf = float(np.sum(g_var * rr * xi))
        g_rr = float(np.sum(g_var * cf * xi))
        g_eta = g_eta + g_cf / (nu + e - 2.0)
        g_nu = g_cf * (e - eta) / (nu + e - 2.0) ** 2 + g_rr * (-2.0 / (nu + e - 2.0) ** 2)

        at_gmu = a.T @ g_mu
        g_m = at_gmu + 2.0 * g_eta * alpha
        wcol = w[:, None]
        g_lf = np.tril(2.0 * (a.T @ (wcol * p)))
        cmat = p @ (binv @ lf).T  # A S B^-1
        g_b = a.T @ (wcol * (a - 2.0 * cmat))
        g_b -= np.outer(at_gmu, alpha)
        g_b -= g_eta * np.outer(alpha, alpha)
        # d/dKxz = g_mu alpha^T + 2 w (cmat - a), contracted with dKxz/dv and dKxz/dell
        t_sum, t_d2 = _backend.se_grad_contract(g_mu, alpha, w, cmat, a, kxz, self.dxz2)

        rzz = c["rzz"]
        g_v = t_sum / v + np.vdot(g_b, rzz) + np.sum(w)
        g_ell = (t_d2 + v * np.vdot(g_b * rzz, self.dzz2)) / ell**3
        g_s2 = float(np.trace(g_b))
        return g_v, g_ell, g_s2, g_nu, g_m, g_lf

    def kl_grad(self, c):
        v, ell, m, lf = c["v"], c["ell"], c["m"], c["lf"]
        e = self.z.size
        kinv = linalg.cho_solve(c["ck"], np.eye(e))
        beta = kinv @ m
        g_m = beta
        g_lf = np.tril(kinv @ lf) - np.diag(1.0 / np.diag(lf))
        ks = kinv @ lf
        g_k = 0.5 * (kinv - ks @ ks.T - np.outer(beta, beta))
        g_v = np.sum(g_k * c["rzz"])
        g_ell = v * np.sum(g_k * c["rzz"] * self.dzz2) / ell**3
        return g_v, g_ell, 0.0, 0.0, g_m, g_lf

    def _chain(self, c, g_v, g_ell, g_s2, g_nu, g_m, g_lf):
        th = c["theta"]
        lay = self.layout
        g = np.empty(lay.size)
        g[:4] = np.array([g_v, g_ell, g_s2, g_nu]) * expit(th[:4])
        if not self.learn_nu:
            g[3] = 0.0
        e = self.z.size
        g[4:4 + e] = g_m
        gl = g_lf[lay.tril]
        gl[lay.diag_pos] *= np.diag(c["lf"])
        g[4 + e:] = gl
        return g

    def value_and_grad(self, theta):
        c = self.forward(theta)
        ell_val = self.expected_loglik(c)
        kl_val = self.kl(c)
        _, g_mu, g_var, g_s2_lik, g_nu_lik = c["lik_terms"]
        gc = self.conditional_grad(c, g_mu, g_var)
        gk = self.kl_grad(c)
        parts = [gc[i] - gk[i] for i in range(6)]
        parts[2] += g_s2_lik
        parts[3] += g_nu_lik
        return ell_val - kl_val, self._chain(c, *parts)


# ---------------------------------------------------------------------------
# public training API

def _quantile_inducing(x: np.ndarray, l_e: int) -> np.ndarray:
    xs = np.sort(x)
    idx = np.round(np.linspace(0, xs.size - 1, l_e)).astype(int)
    z = xs[idx].astype(float)
    # repeated inputs would make K(Z,Z) singular: spread duplicates slightly
    span = max(xs[-1] - xs[0], 1.0)
    for i in range(1, z.size):
        if z[i] <= z[i - 1]:
            z[i] = z[i - 1] + 1e-3 * span / z.size
    return z


def _init_variational_mean(data: TrainingSet, z: np.ndarray) -> np.ndarray:
    k = max(1, min(len(data), int(np.ceil(2 * len(data) / z.size))))
    order = np.argsort(np.abs(data.inputs[None, :] - z[:, None]), axis=1)[:, :k]
    # local medians: a few gross outliers should not drag the starting point
    return np.median(data.targets[order], axis=1)


def _adam(grad_fn, theta, lr, epochs, trace, b1=0.9, b2=0.999, eps=1e-8):
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    for t in range(1, epochs + 1):
        val, g = grad_fn(theta)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite ELBO or gradient at epoch {t}")
        trace.append(float(val))
        m1 = b1 * m1 + (1 - b1) * g
        m2 = b2 * m2 + (1 - b2) * g * g
        theta = theta + lr * (m1 / (1 - b1**t)) / (np.sqrt(m2 / (1 - b2**t)) + eps)
    return theta


def initial_model(data: TrainingSet, l_e: int, nu: float = 3.0, jitter: float = 1e-6) -> SptprModel:
    """Deterministic starting point: quantile inducing inputs, data-driven hyperparameters.

    Target location and spread are estimated robustly (median, MAD) so the
    start is not dominated by outliers.
    """
    if len(data) == 0:
        raise ConfigurationError("empty training set")
    if l_e < 1 or l_e > len(data):
        raise ConfigurationError(f"need 1 <= l_e <= L, got l_e={l_e}, L={len(data)}")
    z = _quantile_inducing(data.inputs, l_e)
    m = _init_variational_mean(data, z)
    y_med = float(np.median(data.targets))
    y_var = float((1.4826 * np.median(np.abs(data.targets - y_med))) ** 2)
    x_sd = float(np.std(data.inputs))
    variance = max(y_var + y_med**2, 1e-2)
    lengthscale = max(0.5 * x_sd, 1e-2) if x_sd > 0 else 1.0
    noise = max(0.1 * y_var, 1e-2)
    lf = np.sqrt(1e-3 * noise) * np.eye(l_e)
    return SptprModel(z, m, lf, KernelParams(variance, lengthscale, jitter), float(nu), noise)


def elbo(model: SptprModel, batch: TrainingSet, n_mc: int = 8, seed: int = 0) -> float:
    """Reparameterised Monte-Carlo ELBO of ``model`` on ``batch``."""
    if n_mc < 1:
        raise ConfigurationError("n_mc must be >= 1")
    eps = np.random.default_rng(seed).standard_normal((len(batch), n_mc))
    obj = _Elbo(batch, model.inducing_inputs, model.kernel.jitter, eps)
    theta = obj.layout.pack(model.kernel.variance, model.kernel.lengthscale, model.noise_var, model.nu,
                            model.variational_mean, model.variational_cov_factor)
    return obj.value(theta)


def kl_divergence(model: SptprModel) -> float:
    """KL(g(f_Z) || N(0, K(Z, Z)))."""
    dummy = TrainingSet(model.inducing_inputs[:1], model.variational_mean[:1])
    obj = _Elbo(dummy, model.inducing_inputs, model.kernel.jitter, np.zeros((1, 1)))
    theta = obj.layout.pack(model.kernel.variance, model.kernel.lengthscale, model.noise_var, model.nu,
                            model.variational_mean, model.variational_cov_factor)
    return obj.kl(obj.forward(theta))


def fit_sptpr(data: TrainingSet, l_e: int, epochs: int = 300, lr: float = 0.01, seed: int = 0,
              n_mc: int = 8, nu: float = 3.0, learn_nu: bool = True, jitter: float = 1e-6) -> SptprModel:
    """Fit an SPTPR model by Adam ascent on the ELBO.

    ``nu`` is the initial (or, with ``learn_nu=False``, fixed) degrees of
    freedom.  The returned model carries the per-epoch ELBO in ``elbo_trace``.
    """
    if epochs < 0:
        raise ConfigurationError("epochs must be >= 0")
    init = initial_model(data, l_e, nu, jitter)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((len(data), n_mc))
    obj = _Elbo(data, init.inducing_inputs, jitter, eps, learn_nu=learn_nu)
    theta0 = obj.layout.pack(init.kernel.variance, init.kernel.lengthscale, init.noise_var, init.nu,
                             init.variational_mean, init.variational_cov_factor)
    trace: list[float] = []
    theta = _adam(obj.value_and_grad, theta0, lr, epochs, trace)
    v, ell, s2, nu_fit, m, lf = obj.layout.unpack(theta)
    if not learn_nu:
        nu_fit = float(nu)
    return SptprModel(init.inducing_inputs, m, lf, KernelParams(float(v), float(ell), jitter),
                      float(nu_fit), float(s2), tuple(trace))


# ---------------------------------------------------------------------------
# learned state-space models

@dataclass(frozen=True)
class VdssmConfig:
    l_e: int = 300
    epochs: int = 300
    lr_f: float = 0.04
    lr_g: float = 0.01
    n_mc: int = 8
    nu: float = 3.0
    learn_nu: bool = False
    seed: int = 0
    include_noise: bool = True


@dataclass(frozen=True)
class SinrCqiBasis:
    """Known link budget mapping IPV (dBm) to the expected CQI index.

    ``h(x) = (signal - 10 log10(10^(x/10) + 10^(noise/10)) - gamma_min) / step``,
    used as a regressor for the measurement model's prior mean.
    """

    signal_dbm: float
    noise_dbm: float
    gamma_min_db: float = -8.0
    step_db: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        sinr = self.signal_dbm - 10.0 * np.logaddexp(x * _DB, self.noise_dbm * _DB) / np.log(10.0)
        return (sinr - self.gamma_min_db) / self.step_db

    def to_dict(self) -> dict:
        return {"signal_dbm": self.signal_dbm, "noise_dbm": self.noise_dbm,
                "gamma_min_db": self.gamma_min_db, "step_db": self.step_db}


_DB = np.log(10.0) / 10.0


@dataclass(frozen=True, eq=False)
class VdssmModel:
    """One scalar SPTPR model regressing the residual of a prior mean.

    The prior mean is ``offset + slope * basis(x)`` where ``basis`` is the
    identity or a ``SinrCqiBasis``.  ``kind`` is ``"F"`` (dynamics) or
    ``"G"`` (measurement).
    """

    sptpr: SptprModel
    offset: float = 0.0
    slope: float = 0.0
    kind: str = "G"
    include_noise: bool = True
    basis: SinrCqiBasis | None = None

    def prior_mean(self, x):
        x = np.asarray(x, dtype=float)
        return self.offset + self.slope * (x if self.basis is None else self.basis(x))

    def mean(self, x):
        return self.prior_mean(x) + self.sptpr.mean(np.asarray(x, dtype=float))

    def posterior(self, x) -> StudentTPosterior:
        p = sparse_conditional(self.sptpr, x)
        return StudentTPosterior(self.prior_mean(x) + p.mean, p.scale, p.nu)

    def noise_var(self, x) -> float:
        """Predictive variance of the regressed target, optionally with observation noise."""
        return float(np.atleast_1d(self.sptpr.predictive_second_moment(x, self.include_noise))[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset, "slope": self.slope,
                "include_noise": self.include_noise,
                "basis": None if self.basis is None else self.basis.to_dict(),
                "sptpr": self.sptpr.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "VdssmModel":
        basis = d.get("basis")
        return cls(SptprModel.from_dict(d["sptpr"]), float(d["offset"]), float(d["slope"]), d["kind"],
                   bool(d.get("include_noise", True)), None if basis is None else SinrCqiBasis(**basis))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "VdssmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _affine_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if np.ptp(x) <= 1e-9 * max(1.0, float(np.abs(x).max())):
        return float(np.mean(y)), 0.0
    slope, offset = np.polyfit(x, y, 1)
    return float(offset), float(slope)


def fit_dynamics_model(prev, cur, cfg: VdssmConfig, seed: int) -> VdssmModel:
    """Least-squares AR(1) prior mean ``cur ~ offset + slope * prev``, SPTPR on the residual.

    The affine part reverts the state toward the training range, so the
    model stays stable when the filter wanders outside the data.
    """
    prev, cur = np.asarray(prev, float), np.asarray(cur, float)
    offset, slope = _affine_fit(prev, cur)
    data = TrainingSet(prev, cur - (offset + slope * prev))
    gp = fit_sptpr(data, min(cfg.l_e, len(data)), cfg.epochs, cfg.lr_f, seed, cfg.n_mc, cfg.nu, cfg.learn_nu)
    return VdssmModel(gp, offset, slope, "F", cfg.include_noise)


def fit_measurement_model(ipv, cqi, cfg: VdssmConfig, seed: int, basis: SinrCqiBasis | None = None) -> VdssmModel:
    """Least-squares prior mean on ``basis(ipv)`` (or ``ipv``), SPTPR on the residual."""
    ipv, cqi = np.asarray(ipv, float), np.asarray(cqi, float)
    offset, slope = _affine_fit(ipv if basis is None else basis(ipv), cqi)
    prior = offset + slope * (ipv if basis is None else basis(ipv))
    data = TrainingSet(ipv, cqi - prior)
    gp = fit_sptpr(data, min(cfg.l_e, len(data)), cfg.epochs, cfg.lr_g, seed, cfg.n_mc, cfg.nu, cfg.learn_nu)
    return VdssmModel(gp, offset, slope, "G", cfg.include_noise, basis)


def build_vdssm_models(ipv_trace, cqi_trace, config: VdssmConfig = VdssmConfig(),
                       bases: list | None = None):
    """Train one dynamics and one measurement model per agent.

    ``ipv_trace`` and ``cqi_trace`` are aligned (T, M) arrays: row ``t`` holds
    the true IPV (dBm) and the CQI generated from it at cycle ``t``.  The
    dynamics model of agent ``m`` regresses ``ipv[t]`` on ``ipv[t-1]``; the
    measurement model regresses ``cqi[t]`` on ``ipv[t]``, optionally around
    a per-agent ``SinrCqiBasis`` prior mean from ``bases``.
    """
    ipv = np.asarray(ipv_trace, dtype=float)
    cqi = np.asarray(cqi_trace, dtype=float)
    if ipv.ndim == 1:
        ipv, cqi = ipv[:, None], cqi[:, None] if cqi.ndim == 1 else cqi
    if ipv.shape != cqi.shape:
        raise ContractViolation(f"IPV trace {ipv.shape} and CQI trace {cqi.shape} are misaligned")
    if bases is not None and len(bases) != ipv.shape[1]:
        raise ContractViolation(f"{len(bases)} measurement bases for {ipv.shape[1]} agents")
    if ipv.shape[0] < 2:
        raise ConfigurationError("need at least two cycles of calibration data")
    if config.l_e < 1 or config.l_e > ipv.shape[0] - 1:
        raise ConfigurationError(f"l_e={config.l_e} must lie in [1, {ipv.shape[0] - 1}]")
    models_f, models_g = [], []
    for m in range(ipv.shape[1]):
        models_f.append(fit_dynamics_model(ipv[:-1, m], ipv[1:, m], config, config.seed + 2 * m))
        basis = None if bases is None else bases[m]
        models_g.append(fit_measurement_model(ipv[:, m], cqi[:, m], config, config.seed + 2 * m + 1, basis))
    return models_f, models_g
