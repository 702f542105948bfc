"""MCS selection under a target-BLER constraint, plus the baseline selectors."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, ContractViolation
from .feedback import CqiTable, dequantize_cqi
from .sptpr import StudentTPosterior

NONE = -1  # sentinel MCS index: no feasible MCS
FEASIBILITY_RTOL = 1e-9


@dataclass(frozen=True)
class McsTable:
    se: tuple
    b_db: tuple
    k_per_db: tuple

    def __post_init__(self):
        n = len(self.se)
        if n == 0 or len(self.b_db) != n or len(self.k_per_db) != n:
            raise ConfigurationError("MCS table columns must be non-empty and of equal length")
        if np.any(np.diff(self.se) <= 0) or np.any(np.diff(self.b_db) <= 0):
            raise ConfigurationError("MCS spectral efficiency and thresholds must be strictly increasing")
        if np.any(np.asarray(self.k_per_db) <= 0) or np.any(np.asarray(self.se) < 0):
            raise ConfigurationError("MCS steepness must be positive and SE non-negative")

    def __len__(self):
        return len(self.se)

    @classmethod
    def default(cls, n: int = 29, se_lo: float = 0.2, se_hi: float = 5.6,
                b0_db: float = -6.0, step_db: float = 1.0, k_per_db: float = 5.0) -> "McsTable":
        se = np.linspace(se_lo, se_hi, n)
        b = b0_db + step_db * np.arange(n)
        return cls(tuple(se.tolist()), tuple(b.tolist()), (float(k_per_db),) * n)

    @classmethod
    def load_csv(cls, path) -> "McsTable":
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["index"]))
        if [int(r["index"]) for r in rows] != list(range(len(rows))):
            raise ConfigurationError(f"{path}: MCS indices must be 0..n-1")
        return cls(tuple(float(r["se"]) for r in rows), tuple(float(r["b_db"]) for r in rows),
                   tuple(float(r["k_per_db"]) for r in rows))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "se", "b_db", "k_per_db"])
            for i in range(len(self)):
                w.writerow([i, repr(self.se[i]), repr(self.b_db[i]), repr(self.k_per_db[i])])


DEFAULT_MCS = McsTable.default()


@dataclass(frozen=True)
class McsDecision:
    sn: int
    sa: int
    mcs: int
    predicted_bler: float
    realized_bler: float = float("nan")
    se_realized: float = float("nan")

    @property
    def feasible(self) -> bool:
        return self.mcs != NONE

    def realize(self, true_sinr_db: float, table: McsTable = DEFAULT_MCS, rng=None) -> "McsDecision":
        """Fill in the realized BLER at the true SINR and an instantaneous SE draw."""
        from .harness import instantaneous_se

        if self.mcs == NONE:
            return McsDecision(self.sn, self.sa, NONE, self.predicted_bler, 1.0, 0.0)
        eps = float(bler(true_sinr_db, self.mcs, table))
        se = instantaneous_se(eps, table.se[self.mcs], rng) if rng is not None else (1 - eps) * table.se[self.mcs]
        return McsDecision(self.sn, self.sa, self.mcs, self.predicted_bler, eps, float(se))


def bler(sinr_db, mcs, table: McsTable = DEFAULT_MCS):
    """Logistic BLER surrogate ``1 / (1 + exp(k (sinr - b)))``."""
    mcs = np.asarray(mcs)
    if np.any(mcs < 0) or np.any(mcs >= len(table)):
        raise ContractViolation(f"MCS index {mcs!r} outside table")
    k = np.asarray(table.k_per_db)[mcs]
    b = np.asarray(table.b_db)[mcs]
    out = stats.logistic.sf(k * (np.asarray(sinr_db, dtype=float) - b))
    return out if np.ndim(out) else float(out)


def student_t_quantile(mean, scale, nu, q):
    """``q``-quantile of a location-scale Student-t with variance-like ``scale``."""
    return mean + stats.t.ppf(q, nu) * np.sqrt(scale)


def _largest_feasible(gamma_db: float, target: float, table: McsTable) -> tuple[int, float]:
    eps = bler(gamma_db, np.arange(len(table)), table)
    ok = np.nonzero(eps <= target * (1 + FEASIBILITY_RTOL))[0]
    if ok.size == 0:
        return NONE, float(eps[0])
    i = int(ok[-1])
    return i, float(eps[i])


def _check_target(target):
    if not 0 < target < 1:
        raise ConfigurationError(f"target BLER must be in (0, 1), got {target}")


def select_mcs(posterior: StudentTPosterior, target: float, table: McsTable = DEFAULT_MCS,
               q: float = 0.05, sn: int = 0, sa: int = 0) -> McsDecision:
    """Largest MCS whose BLER at the posterior ``q``-quantile SINR meets ``target``."""
    _check_target(target)
    if not 0 < q <= 0.5:
        raise ConfigurationError(f"quantile q must be in (0, 0.5], got {q}")
    scale = float(posterior.scale)
    gamma = float(posterior.mean) if scale <= 0 else float(student_t_quantile(posterior.mean, scale, posterior.nu, q))
    mcs, eps = _largest_feasible(gamma, target, table)
    return McsDecision(sn, sa, mcs, eps)


def point_select(sinr_db: float, target: float, table: McsTable = DEFAULT_MCS, sn: int = 0, sa: int = 0):
    _check_target(target)
    mcs, eps = _largest_feasible(float(sinr_db), target, table)
    return McsDecision(sn, sa, mcs, eps)


def genie_select(true_sinr_db: float, target: float, table: McsTable = DEFAULT_MCS,
                 sn: int = 0, sa: int = 0) -> McsDecision:
    d = point_select(true_sinr_db, target, table, sn, sa)
    return McsDecision(sn, sa, d.mcs, d.predicted_bler, d.predicted_bler if d.feasible else 1.0)


class MovingAverage:
    """First-order low-pass filter ``x_hat <- (1 - rho) x_hat + rho x``."""

    def __init__(self, rho: float):
        if not 0 < rho <= 1:
            raise ConfigurationError(f"rho must be in (0, 1], got {rho}")
        self.rho = rho
        self.value = None

    def update(self, x: float) -> float:
        self.value = x if self.value is None else (1 - self.rho) * self.value + self.rho * x
        return self.value


def ma_predict(history: Sequence[float], rho: float) -> float:
    if len(history) == 0:
        raise ContractViolation("moving average needs at least one sample")
    f = MovingAverage(rho)
    for x in history:
        f.update(float(x))
    return f.value


def delayed_estimate_select(cqi_index: int, target: float, table: McsTable = DEFAULT_MCS,
                            cqi_table: CqiTable = CqiTable(), sn: int = 0, sa: int = 0) -> McsDecision:
    """Treat the dequantized delayed CQI as the current SINR."""
    return point_select(dequantize_cqi(int(cqi_index), cqi_table), target, table, sn, sa)


def sinr_posterior_from_ipv(ipv_mean_dbm, ipv_var, signal_dbm, noise_dbm, nu) -> StudentTPosterior:
    """Map an IPV estimate (dBm) to SINR (dB) with a first-order delta-method variance."""
    i_lin = 10.0 ** (np.asarray(ipv_mean_dbm, dtype=float) / 10.0)
    n_lin = 10.0 ** (noise_dbm / 10.0)
    sinr = np.asarray(signal_dbm, dtype=float) - 10.0 * np.log10(i_lin + n_lin)
    w = i_lin / (i_lin + n_lin)
    var = w * w * np.asarray(ipv_var, dtype=float)
    # scale is variance-like: convert so that the t variance equals the delta-method variance
    scale = var * (nu - 2.0) / nu if np.isfinite(nu) else var
    return StudentTPosterior(sinr, scale, float(nu))
