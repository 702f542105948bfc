"""Modified unscented Kalman filter with Student-t sigma points and delay compensation.

Models passed to the filter are duck-typed per state dimension: each needs
``mean(x)`` (vectorised over an array of scalar inputs) and ``noise_var(x)``
(scalar predictive variance at ``x``).  ``VdssmModel`` satisfies this, as does
``AffineModel`` below.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericalError

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class UtParams:
    """Unscented-transform settings.

    With ``spread_correction`` the sigma-point second moments are divided by
    ``nu/(nu-2)`` so the filter covariance stays a Student-t scale matrix;
    for linear models the recursion is then exactly the Kalman filter.
    Without it, moments are taken verbatim from the points and the
    covariance is inflated by ``nu/(nu-2)`` on every prediction.
    """

    kappa: float = 0.96
    alpha: float = 1.0
    beta_ut: float = 2.0
    nu: float = 3.0
    spread_correction: bool = True

    @property
    def moment_factor(self) -> float:
        return (self.nu - 2.0) / self.nu if self.spread_correction else 1.0

    def __post_init__(self):
        if not self.nu > 2:
            raise ConfigurationError(f"UT nu must exceed 2, got {self.nu}")


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray
    cycle: int

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray  # (M, 2s+1)
    mean_weights: np.ndarray
    cov_weights: np.ndarray


@dataclass(frozen=True)
class AffineModel:
    """Scalar ``f(x) = slope * x + offset`` with constant additive noise variance."""

    slope: float = 1.0
    offset: float = 0.0
    noise: float = 0.0

    def mean(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.offset

    def noise_var(self, x) -> float:
        return self.noise


def condition_covariance(cov: np.ndarray) -> np.ndarray:
    """Symmetrise and clip tiny negative eigenvalues; reject NaN or clearly indefinite input."""
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise NumericalError("covariance contains NaN or Inf")
    sym = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(sym)
    if w.size and w[0] < 0:
        tol = 1e-9 * max(1.0, float(np.abs(w).max()))
        if w[0] < -tol:
            raise NumericalError(f"covariance is not PSD (min eigenvalue {w[0]:.3g})")
        w, v = np.linalg.eigh(sym)
        sym = (v * np.maximum(w, 0.0)) @ v.T
        sym = 0.5 * (sym + sym.T)
    return sym


def _sqrtm_psd(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    tol = 1e-9 * max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    if w.size and w[0] < -tol:
        raise NumericalError(f"covariance is not PSD (min eigenvalue {w[0]:.3g})")
    w = np.where(w < EIG_FLOOR, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def ut_weights(s: int, ut: UtParams) -> tuple[np.ndarray, np.ndarray]:
    if not s + ut.kappa > 0:
        raise ConfigurationError(f"s + kappa must be positive (s={s}, kappa={ut.kappa})")
    wm = np.full(2 * s + 1, 0.5 / (s + ut.kappa))
    wc = wm.copy()
    wm[0] = ut.kappa / (s + ut.kappa)
    wc[0] = wm[0] + (1.0 - ut.alpha**2 + ut.beta_ut)
    return wm, wc


def sigma_points(mean, cov, ut: UtParams = UtParams()) -> SigmaPointSet:
    mean = np.asarray(mean, dtype=float).ravel()
    s = mean.size
    cov = np.asarray(cov, dtype=float).reshape(s, s)
    wm, wc = ut_weights(s, ut)
    spread = np.sqrt(ut.nu * (s + ut.kappa) / (ut.nu - 2.0)) * _sqrtm_psd(cov)
    pts = np.empty((s, 2 * s + 1))
    pts[:, 0] = mean
    pts[:, 1:s + 1] = mean[:, None] + spread
    pts[:, s + 1:] = mean[:, None] - spread
    return SigmaPointSet(pts, wm, wc)


def propagate_through_model(points: np.ndarray, models: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Map coordinate ``m`` of every point through ``models[m]``.

    Returns the propagated points and the diagonal noise covariance evaluated
    at point 0 (the input mean).
    """
    points = np.asarray(points, dtype=float)
    if points.shape[0] != len(models):
        raise ContractViolation(f"{len(models)} models for a {points.shape[0]}-dimensional state")
    out = np.empty_like(points)
    noise = np.empty(points.shape[0])
    for m, model in enumerate(models):
        out[m] = model.mean(points[m])
        noise[m] = model.noise_var(points[m, 0])
    if not (np.all(np.isfinite(out)) and np.all(np.isfinite(noise))):
        raise NumericalError("model produced non-finite output")
    return out, np.diag(np.maximum(noise, 0.0))


def _weighted_moments(pts, sp: SigmaPointSet):
    mu = pts @ sp.mean_weights
    dev = pts - mu[:, None]
    return mu, dev, (dev * sp.cov_weights) @ dev.T


def mukf_predict(state: FilterState, models_f: Sequence, ut: UtParams = UtParams()):
    """Prediction step: sigma points, propagation, weighted mean and covariance."""
    sp = sigma_points(state.mean, state.cov, ut)
    prop, c_f = propagate_through_model(sp.points, models_f)
    mu, _, cov = _weighted_moments(prop, sp)
    cov = condition_covariance(ut.moment_factor * cov + c_f)
    return FilterState(mu, cov, state.cycle + 1), SigmaPointSet(prop, sp.mean_weights, sp.cov_weights)


def mukf_update(predicted: FilterState, cqi, models_g: Sequence, ut: UtParams = UtParams()) -> FilterState:
    """Measurement update with the CQI vector generated at ``predicted.cycle``."""
    if getattr(cqi, "generated_at", predicted.cycle) != predicted.cycle:
        raise ContractViolation(f"CQI generated at {cqi.generated_at} cannot update state at {predicted.cycle}")
    y = np.asarray(cqi.as_array() if hasattr(cqi, "as_array") else cqi, dtype=float).ravel()
    sp = sigma_points(predicted.mean, predicted.cov, ut)
    gam, c_g = propagate_through_model(sp.points, models_g)
    y_hat, dev_y, s_cov = _weighted_moments(gam, sp)
    c = ut.moment_factor
    s_cov = c * s_cov + c_g
    dev_x = sp.points - predicted.mean[:, None]
    cross = c * ((dev_x * sp.cov_weights) @ dev_y.T)
    gain = _solve_gain(cross, s_cov)
    mean = predicted.mean + gain @ (y - y_hat)
    cov = condition_covariance(predicted.cov - gain @ s_cov @ gain.T)
    return FilterState(mean, cov, predicted.cycle)


def _solve_gain(cross: np.ndarray, s_cov: np.ndarray) -> np.ndarray:
    s_cov = 0.5 * (s_cov + s_cov.T)
    for attempt in range(2):
        try:
            c = np.linalg.cholesky(s_cov)
        except np.linalg.LinAlgError:
            if attempt:
                raise NumericalError("innovation covariance is singular") from None
            s_cov = s_cov + 1e-6 * np.eye(s_cov.shape[0])
            continue
        # K = cross S^-1 via two triangular solves
        tmp = np.linalg.solve(c, cross.T)
        return np.linalg.solve(c.T, tmp).T
    raise NumericalError("innovation covariance is singular")  # pragma: no cover


class DelayBuffer:
    """Filter states for the ``d + 1`` most recent contiguous cycles, oldest first."""

    def __init__(self, delay: int, initial: FilterState | None = None):
        if delay < 0:
            raise ConfigurationError("delay must be >= 0")
        self.delay = delay
        self._states: deque[FilterState] = deque(maxlen=delay + 1)
        if initial is not None:
            self._states.append(initial)

    def __len__(self):
        return len(self._states)

    def __iter__(self):
        return iter(self._states)

    @property
    def oldest(self) -> FilterState:
        return self._states[0]

    @property
    def latest(self) -> FilterState:
        return self._states[-1]

    def cycles(self) -> list[int]:
        return [s.cycle for s in self._states]

    def replace_all(self, states: Sequence[FilterState]) -> None:
        cyc = [s.cycle for s in states]
        if cyc != list(range(cyc[0], cyc[0] + len(cyc))):
            raise ContractViolation(f"buffer cycles must be contiguous, got {cyc}")
        self._states = deque(states, maxlen=self.delay + 1)


def sptpr_mukf_step(buffer: DelayBuffer, cqi, models_f: Sequence, models_g: Sequence,
                    ut: UtParams = UtParams(), d: int | None = None) -> FilterState:
    """Delay-compensated filter step.

    Takes the buffered estimate at ``t-d-1``, predicts and updates it with
    the CQI generated at ``t-d``, then rolls the estimate forward ``d``
    cycles, propagating the covariance with the same unscented prediction.  The buffer ends up holding cycles ``t-d .. t`` and the estimate
    for ``t`` is returned.
    """
    d = buffer.delay if d is None else d
    if d != buffer.delay:
        raise ContractViolation(f"buffer sized for delay {buffer.delay}, called with d={d}")
    if len(buffer) == 0:
        raise ContractViolation("empty delay buffer")
    base = buffer.oldest
    if base.cycle != cqi.generated_at - 1:
        raise ContractViolation(f"buffer holds cycle {base.cycle}, need {cqi.generated_at - 1}")
    predicted, _ = mukf_predict(base, models_f, ut)
    state = mukf_update(predicted, cqi, models_g, ut)
    chain = [state]
    for _ in range(d):
        state, _ = mukf_predict(state, models_f, ut)
        chain.append(state)
    buffer.replace_all(chain)
    return state


class DelayCompensatedTracker:
    """Per-SN online wrapper around ``sptpr_mukf_step``.

    Before the first CQI arrives the tracker returns open-loop predictions
    from the prior state.
    """

    def __init__(self, prior: FilterState, models_f, models_g, ut: UtParams, delay: int):
        self.models_f, self.models_g, self.ut, self.delay = models_f, models_g, ut, delay
        self.prior = prior
        self.buffer = DelayBuffer(delay, prior)
        self._open_loop = prior

    def step(self, now: int, cqi=None) -> FilterState:
        if cqi is not None:
            return sptpr_mukf_step(self.buffer, cqi, self.models_f, self.models_g, self.ut, self.delay)
        while self._open_loop.cycle < now:
            self._open_loop, _ = mukf_predict(self._open_loop, self.models_f, self.ut)
        return self._open_loop
