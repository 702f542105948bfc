"""SINR -> eSNR -> CQI feedback path with a fixed protocol delay."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, ContractViolation

DEFAULT_FLOOR_DB = -200.0


@dataclass(frozen=True)
class CqiTable:
    n_levels: int = 29
    gamma_min_db: float = -8.0
    step_db: float = 1.0

    def __post_init__(self):
        if self.n_levels < 2:
            raise ConfigurationError("CqiTable needs at least 2 levels")
        if not self.step_db > 0:
            raise ConfigurationError("CqiTable step_db must be positive")

    @property
    def top_db(self) -> float:
        return self.gamma_min_db + self.n_levels * self.step_db


@dataclass(frozen=True)
class CqiReport:
    sn: int
    values: tuple  # per-SA CQI indices
    generated_at: int
    delivered_at: int | None = None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def sinr_to_esnr(sinr_db, sigma_est: float = 0.5, rng: np.random.Generator | None = None,
                 floor_db: float = DEFAULT_FLOOR_DB):
    """Wideband eSNR: identity plus Gaussian estimation error of ``sigma_est`` dB.

    Values at or below ``floor_db`` pass through untouched.
    """
    x = np.asarray(sinr_db, dtype=float)
    if sigma_est > 0:
        if rng is None:
            raise ContractViolation("an rng is required when sigma_est > 0")
        noisy = x + sigma_est * rng.standard_normal(x.shape)
        x = np.where(x <= floor_db, x, noisy)
    return x if x.ndim else float(x)


def quantize_cqi(esnr_db, table: CqiTable = CqiTable()):
    idx = np.floor((np.asarray(esnr_db, dtype=float) - table.gamma_min_db) / table.step_db)
    idx = np.clip(idx, 0, table.n_levels - 1).astype(int)
    return idx if idx.ndim else int(idx)


def dequantize_cqi(index, table: CqiTable = CqiTable()):
    """Bin center of a CQI index, in dB."""
    k = np.asarray(index)
    if not np.issubdtype(k.dtype, np.integer):
        if not np.all(np.mod(k, 1) == 0):
            raise ContractViolation(f"CQI index must be integral, got {index!r}")
        k = k.astype(int)
    if np.any(k < 0) or np.any(k >= table.n_levels):
        raise ContractViolation(f"CQI index {index!r} outside [0, {table.n_levels})")
    out = table.gamma_min_db + (k + 0.5) * table.step_db
    return out if out.ndim else float(out)


class FeedbackChannel:
    """FIFO delay line: a report generated at ``t`` is delivered at ``t + delay``."""

    def __init__(self, delay: int):
        if delay < 0:
            raise ConfigurationError("delay must be >= 0")
        self.delay = int(delay)
        self._queue: deque[CqiReport] = deque()
        self._last = None

    def __len__(self):
        return len(self._queue)

    def push(self, report: CqiReport) -> None:
        if self._last is not None and report.generated_at <= self._last:
            raise ContractViolation("reports must be pushed in cycle order")
        self._last = report.generated_at
        self._queue.append(replace(report, delivered_at=report.generated_at + self.delay))

    def pop(self, now: int) -> CqiReport | None:
        q = self._queue
        while q and q[0].delivered_at < now:  # stale, never popped in time
            q.popleft()
        if q and q[0].delivered_at == now:
            return q.popleft()
        return None


def write_cqi_csv(path, reports: Iterable[CqiReport], cycle_of=lambda r: r.generated_at) -> int:
    """CSV with columns cycle, sn, sa, cqi, generated_at."""
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "sn", "sa", "cqi", "generated_at"])
        for r in reports:
            for sa, v in enumerate(r.values):
                w.writerow([cycle_of(r), r.sn, sa, int(v), r.generated_at])
                count += 1
    return count
