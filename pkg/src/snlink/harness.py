"""End-to-end experiments: calibration, model training, online link adaptation, metrics.

All methods in one run see the same ground-truth stream, the same CQI
measurement noise and the same Bernoulli success draws (common random
numbers), so differences between methods come from the decisions alone.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, SnlinkError
from .feedback import CqiReport, CqiTable, dequantize_cqi, quantize_cqi, sinr_to_esnr
from .link_adaptation import (DEFAULT_MCS, NONE, FEASIBILITY_RTOL, McsTable, MovingAverage, bler,
                              point_select, select_mcs, sinr_posterior_from_ipv,
                              student_t_quantile)
from .mukf import DelayCompensatedTracker, FilterState, UtParams
from .scenario import ScenarioConfig, advance, init_scenario, sample_cycle
from .sptpr import SinrCqiBasis, VdssmConfig, build_vdssm_models

log = logging.getLogger(__name__)

METHODS = ("genie", "delayed", "ma", "sptpr_mukf")


class PhaseError(SnlinkError):
    """Wraps an error raised inside one experiment phase."""

    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase} phase failed: {cause}")
        self.phase = phase
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    delay: int = 2
    target_bler: float = 1e-3
    n_train: int = 1000
    n_inducing: int = 300
    epochs: int = 300
    lr_f: float = 0.04
    lr_g: float = 0.01
    ut: UtParams = field(default_factory=UtParams)
    q: float = 0.05
    horizon_cycles: int = 2000
    warmup_cycles: int = 50
    methods: tuple = METHODS
    seed: int = 0
    ma_rho: float = 0.3
    sigma_est_db: float = 0.5
    model_nu: float = 3.0
    learn_nu: bool = False
    n_mc: int = 8
    model_noise_in_filter: bool = True
    link_budget_prior: bool = True
    ipv_clamp_below_noise_db: float = 30.0
    eval_subnets: tuple | None = None
    mcs_table: str | None = None

    def validate(self) -> "ExperimentConfig":
        self.scenario.validate()
        if self.delay < 0:
            raise ConfigurationError("delay must be >= 0")
        if not self.horizon_cycles > self.delay:
            raise ConfigurationError("horizon_cycles must exceed the delay")
        if not 0 <= self.warmup_cycles < self.horizon_cycles:
            raise ConfigurationError("warmup_cycles must be in [0, horizon_cycles)")
        if not 1 <= self.n_inducing < self.n_train:
            raise ConfigurationError("need 1 <= n_inducing < n_train")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if not 0 < self.target_bler < 1:
            raise ConfigurationError("target_bler must be in (0, 1)")
        if not 0 < self.q <= 0.5:
            raise ConfigurationError("q must be in (0, 0.5]")
        if not 0 < self.ma_rho <= 1:
            raise ConfigurationError("ma_rho must be in (0, 1]")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigurationError(f"unknown methods {sorted(bad)}; valid: {list(METHODS)}")
        n = self.scenario.n_subnets
        if self.eval_subnets is not None and any(not 0 <= s < n for s in self.eval_subnets):
            raise ConfigurationError(f"eval_subnets must be within [0, {n})")
        return self

    @property
    def subnets(self) -> tuple:
        return tuple(range(self.scenario.n_subnets)) if self.eval_subnets is None else tuple(self.eval_subnets)

    def vdssm(self) -> VdssmConfig:
        return VdssmConfig(l_e=self.n_inducing, epochs=self.epochs, lr_f=self.lr_f, lr_g=self.lr_g,
                           n_mc=self.n_mc, nu=self.model_nu, learn_nu=self.learn_nu, seed=self.seed,
                           include_noise=self.model_noise_in_filter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["eval_subnets"] = None if self.eval_subnets is None else list(self.eval_subnets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment keys: {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"] or {})
        if "ut" in d:
            ut = d["ut"] or {}
            bad = set(ut) - {f.name for f in fields(UtParams)}
            if bad:
                raise ConfigurationError(f"unknown ut keys: {sorted(bad)}")
            d["ut"] = UtParams(**ut)
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        if d.get("eval_subnets") is not None:
            d["eval_subnets"] = tuple(int(s) for s in d["eval_subnets"])
        return cls(**d)

    def load_mcs_table(self) -> McsTable:
        return DEFAULT_MCS if self.mcs_table is None else McsTable.load_csv(self.mcs_table)


# ---------------------------------------------------------------------------
# metrics


def instantaneous_se(eps, rate, rng: np.random.Generator):
    """Bernoulli-gated spectral efficiency: ``rate`` with probability ``1 - eps``, else 0."""
    eps = np.asarray(eps, dtype=float)
    if np.any((eps < 0) | (eps > 1)) or np.any(np.asarray(rate) < 0):
        raise ContractViolation("need eps in [0, 1] and rate >= 0")
    out = np.where(rng.uniform(size=eps.shape) < 1.0 - eps, rate, 0.0)
    return out if out.ndim else float(out)


def bler_percentile(samples, p: float = 0.9) -> float:
    """Nearest-rank percentile."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ContractViolation("percentile of an empty sample set")
    if not 0 < p < 1:
        raise ContractViolation(f"p must be in (0, 1), got {p}")
    rank = max(1, math.ceil(p * x.size - 1e-12))
    return float(x[rank - 1])


@dataclass
class MethodTrace:
    """Per (cycle, evaluated SN, SA) arrays for one method."""

    mcs: np.ndarray
    decision_sinr_db: np.ndarray  # SINR value the decision was checked against
    predicted_bler: np.ndarray
    realized_bler: np.ndarray
    se: np.ndarray


@dataclass
class ResultTable:
    config: dict
    mean_se: dict  # method -> list per SA
    bler_p90: dict  # method -> float
    none_fraction: dict
    mcs_histogram: dict  # method -> counts per MCS index, NONE last
    n_samples: int
    cycles: np.ndarray
    subnets: tuple
    true_ipv_dbm: np.ndarray
    true_sinr_db: np.ndarray
    traces: dict = field(default_factory=dict)  # method -> MethodTrace
    filter_mean: np.ndarray | None = None
    filter_var: np.ndarray | None = None

    @property
    def methods(self) -> list:
        return list(self.mean_se)

    def summary(self) -> dict:
        return {
            "methods": {m: {"mean_se_per_sa": self.mean_se[m], "mean_se": float(np.mean(self.mean_se[m])),
                            "bler_p90": self.bler_p90[m], "none_fraction": self.none_fraction[m],
                            "mcs_histogram": self.mcs_histogram[m]} for m in self.methods},
            "n_samples": self.n_samples,
            "subnets": list(self.subnets),
            "config": self.config,
        }


def constraint_violations(result: ResultTable, target: float, table: McsTable = DEFAULT_MCS) -> dict:
    """Re-evaluate every non-NONE decision against the target; returns method -> violation count."""
    out = {}
    for m, tr in result.traces.items():
        ok = tr.mcs != NONE
        if not np.any(ok):
            out[m] = 0
            continue
        eps = bler(tr.decision_sinr_db[ok], tr.mcs[ok], table)
        out[m] = int(np.sum(eps > target * (1 + FEASIBILITY_RTOL)))
    return out


# ---------------------------------------------------------------------------
# phases


@dataclass
class Calibration:
    ipv_dbm: np.ndarray  # (L, N, M), clamped
    sinr_db: np.ndarray
    cqi: np.ndarray  # (L, N, M) int
    end_state: object  # ScenarioState at the first online cycle
    rng: np.random.Generator  # feedback rng continuing into the online phase
    signal_dbm: np.ndarray  # (N, M)


@dataclass
class Prepared:
    calibration: Calibration
    models: dict  # sn -> (models_F, models_G)


def _clamp_ipv(cfg: ExperimentConfig, ipv):
    return np.maximum(ipv, cfg.scenario.noise_power_dbm - cfg.ipv_clamp_below_noise_db)


def _cqi(sinr, rng, cfg: ExperimentConfig, table: CqiTable):
    return quantize_cqi(sinr_to_esnr(sinr, cfg.sigma_est_db, rng, cfg.scenario.ipv_floor_dbm), table)


def calibrate(cfg: ExperimentConfig, cqi_table: CqiTable = CqiTable()) -> Calibration:
    state = init_scenario(replace(cfg.scenario, seed=cfg.seed))
    rng = np.random.default_rng([cfg.seed, 1])
    L = cfg.n_train
    shape = (L, cfg.scenario.n_subnets, cfg.scenario.n_sas)
    ipv, sinr, cqi = np.empty(shape), np.empty(shape), np.empty(shape, dtype=int)
    sig = None
    for t in range(L):
        gt = sample_cycle(state)
        ipv[t], sinr[t], sig = gt.ipv_dbm, gt.sinr_db, gt.signal_dbm
        cqi[t] = _cqi(gt.sinr_db, rng, cfg, cqi_table)
        state = advance(state)
    return Calibration(_clamp_ipv(cfg, ipv), sinr, cqi, state, rng, sig)


def train(cfg: ExperimentConfig, cal: Calibration, subnets: Sequence[int] | None = None,
          cqi_table: CqiTable = CqiTable()) -> dict:
    models = {}
    for sn in (cfg.subnets if subnets is None else subnets):
        vc = replace(cfg.vdssm(), seed=cfg.seed + 7919 * (sn + 1))
        bases = None
        if cfg.link_budget_prior:
            bases = [SinrCqiBasis(float(cal.signal_dbm[sn, m]), cfg.scenario.noise_power_dbm,
                                  cqi_table.gamma_min_db, cqi_table.step_db) for m in range(cfg.scenario.n_sas)]
        models[sn] = build_vdssm_models(cal.ipv_dbm[:, sn, :], cal.cqi[:, sn, :], vc, bases)
        log.info("trained models for SN %d", sn)
    return models


def prepare(cfg: ExperimentConfig) -> Prepared:
    cfg.validate()
    try:
        cal = calibrate(cfg)
    except SnlinkError as exc:
        raise PhaseError("calibration", exc) from exc
    models = {}
    if "sptpr_mukf" in cfg.methods:
        try:
            models = train(cfg, cal)
        except SnlinkError as exc:
            raise PhaseError("training", exc) from exc
    return Prepared(cal, models)


def _prior_state(cal: Calibration, sn: int, cycle: int) -> FilterState:
    x = cal.ipv_dbm[:, sn, :]
    return FilterState(x.mean(axis=0), np.diag(np.maximum(x.var(axis=0), 1e-6)), cycle)


def run_online(cfg: ExperimentConfig, prep: Prepared, cqi_table: CqiTable = CqiTable()) -> ResultTable:
    """Online phase on the scenario continuation; training-independent knobs (d, q) may vary."""
    cfg.validate()
    table = cfg.load_mcs_table()
    cal = prep.calibration
    sc = cfg.scenario
    subnets = cfg.subnets
    H, d, M = cfg.horizon_cycles, cfg.delay, sc.n_sas
    n_eval = len(subnets)
    state = cal.end_state
    t0 = state.cycle
    fb_rng = np.random.default_rng([cfg.seed, 2])
    se_rng = np.random.default_rng([cfg.seed, 3])
    sig = cal.signal_dbm[list(subnets)]

    # ground truth and CQI stream, shared by every method
    ipv = np.empty((H, n_eval, M))
    sinr = np.empty((H, n_eval, M))
    cqi = np.empty((H, n_eval, M), dtype=int)
    for k in range(H):
        gt = sample_cycle(state)
        ipv[k], sinr[k] = gt.ipv_dbm[list(subnets)], gt.sinr_db[list(subnets)]
        cqi[k] = _cqi(gt.sinr_db, fb_rng, cfg, cqi_table)[list(subnets)]
        state = advance(state)
    uniforms = se_rng.uniform(size=(H, n_eval, M))
    rate = np.asarray(table.se)

    def empty():
        return MethodTrace(np.full((H, n_eval, M), NONE), np.full((H, n_eval, M), np.nan),
                           np.ones((H, n_eval, M)), np.ones((H, n_eval, M)), np.zeros((H, n_eval, M)))

    traces = {m: empty() for m in cfg.methods}
    fmean = fvar = None

    def record(tr: MethodTrace, k, i, a, gamma, dec):
        tr.mcs[k, i, a] = dec.mcs
        tr.decision_sinr_db[k, i, a] = gamma
        tr.predicted_bler[k, i, a] = dec.predicted_bler

    try:
        if "genie" in traces:
            for k in range(H):
                for i in range(n_eval):
                    for a in range(M):
                        s = sinr[k, i, a]
                        record(traces["genie"], k, i, a, s, point_select(s, cfg.target_bler, table))
        if "delayed" in traces or "ma" in traces:
            ma = [[MovingAverage(cfg.ma_rho) for _ in range(M)] for _ in range(n_eval)]
            for k in range(d, H):
                for i in range(n_eval):
                    for a in range(M):
                        x = dequantize_cqi(int(cqi[k - d, i, a]), cqi_table)
                        if "delayed" in traces:
                            record(traces["delayed"], k, i, a, x, point_select(x, cfg.target_bler, table))
                        if "ma" in traces:
                            y = ma[i][a].update(x)
                            record(traces["ma"], k, i, a, y, point_select(y, cfg.target_bler, table))
        if "sptpr_mukf" in traces:
            fmean, fvar = np.full((H, n_eval, M), np.nan), np.full((H, n_eval, M), np.nan)
            nu = cfg.ut.nu
            tr = traces["sptpr_mukf"]
            for i, sn in enumerate(subnets):
                mf, mg = prep.models[sn]
                trk = DelayCompensatedTracker(_prior_state(cal, sn, t0 - 1), mf, mg, cfg.ut, d)
                for k in range(H):
                    report = None
                    if k >= d:
                        report = CqiReport(sn, tuple(cqi[k - d, i].tolist()), t0 + k - d, t0 + k)
                    st = trk.step(t0 + k, report)
                    var = np.diag(st.cov)
                    fmean[k, i], fvar[k, i] = st.mean, var
                    post = sinr_posterior_from_ipv(st.mean, var, sig[i], sc.noise_power_dbm, nu)
                    for a in range(M):
                        one = type(post)(float(post.mean[a]), float(post.scale[a]), post.nu)
                        dec = select_mcs(one, cfg.target_bler, table, cfg.q, sn, a)
                        gamma = _gamma_low(one, cfg.q)
                        record(tr, k, i, a, gamma, dec)
    except SnlinkError as exc:
        raise PhaseError("online", exc) from exc

    lo = cfg.warmup_cycles
    mean_se, p90, none_frac, hist = {}, {}, {}, {}
    for m, tr in traces.items():
        ok = tr.mcs != NONE
        idx = np.where(ok, tr.mcs, 0)
        tr.realized_bler = np.where(ok, bler(sinr, idx, table), 1.0)
        tr.se = np.where(ok & (uniforms < 1.0 - tr.realized_bler), rate[idx], 0.0)
        w = slice(lo, H)
        mean_se[m] = tr.se[w].mean(axis=(0, 1)).tolist()
        p90[m] = bler_percentile(tr.realized_bler[w], 0.9)
        none_frac[m] = float(np.mean(~ok[w]))
        counts = np.bincount(np.where(ok[w], tr.mcs[w], len(table)).ravel(), minlength=len(table) + 1)
        hist[m] = counts.tolist()
    return ResultTable(cfg.to_dict(), mean_se, p90, none_frac, hist, int((H - lo) * n_eval * M),
                       np.arange(t0, t0 + H), tuple(subnets), ipv, sinr, traces, fmean, fvar)


def _gamma_low(post, q):
    return float(post.mean) if post.scale <= 0 else float(student_t_quantile(post.mean, post.scale, post.nu, q))


def run_experiment(cfg: ExperimentConfig, prepared: Prepared | None = None) -> ResultTable:
    """Calibrate, train and run the online phase; ``prepared`` skips the first two phases."""
    prep = prepare(cfg) if prepared is None else prepared
    return run_online(cfg, prep)


# ---------------------------------------------------------------------------
# outputs


def write_results(result: ResultTable, out_dir, tag: str) -> dict:
    """Write ``results_<tag>.json`` and ``trace_<tag>.csv``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / f"results_{tag}.json"
    with open(js, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
    tr = out / f"trace_{tag}.csv"
    with open(tr, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "sn", "sa", "method", "mcs", "decision_sinr_db", "predicted_bler",
                    "realized_bler", "se", "true_sinr_db", "true_ipv_dbm"])
        for m, t in result.traces.items():
            for k, cyc in enumerate(result.cycles):
                for i, sn in enumerate(result.subnets):
                    for a in range(t.mcs.shape[2]):
                        w.writerow([int(cyc), sn, a, m, int(t.mcs[k, i, a]), repr(float(t.decision_sinr_db[k, i, a])),
                                    repr(float(t.predicted_bler[k, i, a])), repr(float(t.realized_bler[k, i, a])),
                                    repr(float(t.se[k, i, a])), repr(float(result.true_sinr_db[k, i, a])),
                                    repr(float(result.true_ipv_dbm[k, i, a]))])
    paths = {"json": str(js), "trace": str(tr)}
    if result.filter_mean is not None:
        ft = out / f"filter_{tag}.csv"
        with open(ft, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "sn", "sa", "predicted_ipv_dbm", "predicted_var", "true_ipv_dbm"])
            for k, cyc in enumerate(result.cycles):
                for i, sn in enumerate(result.subnets):
                    for a in range(result.filter_mean.shape[2]):
                        w.writerow([int(cyc), sn, a, repr(float(result.filter_mean[k, i, a])),
                                    repr(float(result.filter_var[k, i, a])), repr(float(result.true_ipv_dbm[k, i, a]))])
        paths["filter"] = str(ft)
    return paths
