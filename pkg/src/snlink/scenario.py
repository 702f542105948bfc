"""Mobile sub-network scenario: positions, channel gains, inter-SN interference.

The channel is a desk-scale surrogate: log-distance path loss, Gauss-Markov
log-normal shadowing per link and first-order autoregressive Rayleigh
fading.  Intra-SN (controller to agent) links are short and static, so all
SINR dynamics come from the interference term.
"""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field, fields, replace
from typing import Iterable

import numpy as np
from scipy.special import j0

from . import _backend
from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi
FADING_MODELS = ("exp", "jakes")


@dataclass(frozen=True)
class ScenarioConfig:
    n_subnets: int = 20
    n_sas: int = 1
    area_side: float = 25.0
    velocity: float = 2.0
    carrier_hz: float = 6e9
    n_subbands: int = 4
    tx_power_dbm: float = 0.0
    noise_power_dbm: float = -50.0
    frame_ms: float = 1.0
    slots_per_dl: int | None = None
    duty_probability: float = 0.9
    shadowing_sigma_db: float = 4.0
    shadowing_corr_dist_m: float = 5.0
    fading_doppler_hz: float = 80.0
    pathloss_exponent: float = 2.5
    seed: int = 0
    pl0_db: float = 40.0
    d0_m: float = 1.0
    d_min_m: float = 0.1
    sa_radius_m: float = 2.0
    heading_redraw_prob: float = 0.05
    ipv_floor_dbm: float = -200.0
    fading_model: str = "jakes"

    @property
    def n_slots(self) -> int:
        return self.n_sas if self.slots_per_dl is None else self.slots_per_dl

    def validate(self) -> "ScenarioConfig":
        if self.n_subnets < 1 or self.n_sas < 1:
            raise ConfigurationError("n_subnets and n_sas must be >= 1")
        if not self.area_side > 0:
            raise ConfigurationError(f"area_side must be positive, got {self.area_side}")
        if self.n_subbands < 1:
            raise ConfigurationError("n_subbands must be >= 1")
        if self.velocity < 0:
            raise ConfigurationError("velocity must be >= 0")
        if not 0.0 <= self.duty_probability <= 1.0:
            raise ConfigurationError("duty_probability must lie in [0, 1]")
        if self.n_slots < self.n_sas:
            raise ConfigurationError("slots_per_dl must be >= n_sas (one slot per agent)")
        if self.shadowing_sigma_db < 0 or self.shadowing_corr_dist_m <= 0:
            raise ConfigurationError("invalid shadowing parameters")
        if self.fading_doppler_hz < 0 or self.frame_ms <= 0:
            raise ConfigurationError("invalid fading parameters")
        if self.fading_model not in FADING_MODELS:
            raise ConfigurationError(f"fading_model must be one of {FADING_MODELS}, got {self.fading_model!r}")
        if not 0.0 <= self.heading_redraw_prob <= 1.0:
            raise ConfigurationError("heading_redraw_prob must lie in [0, 1]")
        for f in ("tx_power_dbm", "noise_power_dbm", "pl0_db", "ipv_floor_dbm"):
            if not np.isfinite(getattr(self, f)):
                raise ConfigurationError(f"{f} must be finite")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class ScenarioState:
    """Everything that evolves over Tx cycles.  Treat as immutable."""

    config: ScenarioConfig
    positions: np.ndarray  # (N, 2)
    headings: np.ndarray  # (N,)
    sa_offsets: np.ndarray  # (N, M, 2), fixed
    subband_assignment: np.ndarray  # (N,)
    slot_schedule: np.ndarray  # (N, n_slots), agent index or -1 for idle
    shadow_fields: np.ndarray  # (N_tx, N_rx, M) dB
    fading_states: np.ndarray  # (N_tx, N_rx, M) complex
    active: np.ndarray  # (N,) bool, traffic activity this cycle
    cycle: int = 0
    rng: np.random.Generator = field(repr=False, default=None)

    @property
    def sa_positions(self) -> np.ndarray:
        return self.positions[:, None, :] + self.sa_offsets

    @property
    def cochannel(self) -> np.ndarray:
        """(N_tx, N_rx) mask of distinct SNs sharing a subband."""
        sb = self.subband_assignment
        mask = sb[:, None] == sb[None, :]
        np.fill_diagonal(mask, False)
        return mask


@dataclass(frozen=True)
class GroundTruth:
    """Per-(SN, SA) interference and SINR for one slot or one whole cycle."""

    cycle: int
    ipv_dbm: np.ndarray
    sinr_db: np.ndarray
    signal_dbm: np.ndarray
    interferer_set: tuple  # per SN: tuple of interfering SN ids
    active: np.ndarray


def init_scenario(config: ScenarioConfig) -> ScenarioState:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, m = config.n_subnets, config.n_sas
    positions = rng.uniform(0.0, config.area_side, size=(n, 2))
    headings = rng.uniform(0.0, TWO_PI, size=n)
    # agents uniform in a disk around the controller, sorted nearest first
    r = config.sa_radius_m * np.sqrt(rng.uniform(size=(n, m)))
    r = np.sort(np.maximum(r, config.d_min_m), axis=1)
    phi = rng.uniform(0.0, TWO_PI, size=(n, m))
    sa_offsets = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    subbands = np.arange(n) % config.n_subbands
    slots = np.full((n, config.n_slots), -1, dtype=int)
    slots[:, :m] = np.arange(m)
    shadow = config.shadowing_sigma_db * rng.standard_normal((n, n, m))
    fading = (rng.standard_normal((n, n, m)) + 1j * rng.standard_normal((n, n, m))) / np.sqrt(2.0)
    active = rng.uniform(size=n) < config.duty_probability
    return ScenarioState(
        config=config,
        positions=positions,
        headings=headings,
        sa_offsets=sa_offsets,
        subband_assignment=subbands,
        slot_schedule=slots,
        shadow_fields=shadow,
        fading_states=fading,
        active=active,
        cycle=0,
        rng=rng,
    )


def _reflect(pos: np.ndarray, heading: np.ndarray, side: float):
    pos = pos.copy()
    heading = heading.copy()
    for _ in range(4):  # a long step may bounce more than once
        lo_x, hi_x = pos[:, 0] < 0, pos[:, 0] > side
        pos[lo_x, 0] = -pos[lo_x, 0]
        pos[hi_x, 0] = 2 * side - pos[hi_x, 0]
        heading[lo_x | hi_x] = np.pi - heading[lo_x | hi_x]
        lo_y, hi_y = pos[:, 1] < 0, pos[:, 1] > side
        pos[lo_y, 1] = -pos[lo_y, 1]
        pos[hi_y, 1] = 2 * side - pos[hi_y, 1]
        heading[lo_y | hi_y] = -heading[lo_y | hi_y]
        if not (lo_x | hi_x | lo_y | hi_y).any():
            break
    pos = np.clip(pos, 0.0, side)
    return pos, np.mod(heading, TWO_PI)


def step_mobility(state: ScenarioState, dt: float) -> ScenarioState:
    """Advance every SN by ``velocity * dt`` (``dt`` in ms) along its heading."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    cfg = state.config
    rng = copy.deepcopy(state.rng)
    step = cfg.velocity * dt * 1e-3
    delta = step * np.stack([np.cos(state.headings), np.sin(state.headings)], axis=1)
    pos, heading = _reflect(state.positions + delta, state.headings, cfg.area_side)
    redraw = rng.uniform(size=heading.shape) < cfg.heading_redraw_prob
    heading = np.where(redraw, rng.uniform(0.0, TWO_PI, size=heading.shape), heading)
    return replace(state, positions=pos, headings=heading, rng=rng)


def fading_coefficient(doppler_hz: float, dt_ms: float, model: str = "exp") -> float:
    """Lag-one coefficient of the AR(1) fading process.

    ``"exp"`` gives ``exp(-2 pi f_D dt)``; ``"jakes"`` gives the Clarke/Jakes
    autocorrelation ``J0(2 pi f_D dt)`` clipped at zero.
    """
    x = TWO_PI * doppler_hz * dt_ms * 1e-3
    if model == "jakes":
        return float(max(j0(x), 0.0))
    if model == "exp":
        return float(np.exp(-x))
    raise ConfigurationError(f"unknown fading model {model!r}")


def pathloss_db(cfg: ScenarioConfig, dist) -> np.ndarray:
    d = np.maximum(np.asarray(dist, dtype=float), cfg.d_min_m)
    return cfg.pl0_db + 10.0 * cfg.pathloss_exponent * np.log10(d / cfg.d0_m)


def _link_vectors(state: ScenarioState) -> np.ndarray:
    """(N_tx, N_rx, M, 2) vector from each controller to each agent."""
    return state.sa_positions[None, :, :, :] - state.positions[:, None, None, :]


def step_channel(state: ScenarioState, old: ScenarioState, dt: float) -> ScenarioState:
    """Evolve shadowing and fading from ``old`` geometry to ``state`` geometry."""
    cfg = state.config
    rng = copy.deepcopy(state.rng)
    shape = state.shadow_fields.shape
    moved = np.linalg.norm(_link_vectors(state) - _link_vectors(old), axis=-1)
    rho_s = np.exp(-moved / cfg.shadowing_corr_dist_m)
    shadow = rho_s * state.shadow_fields + np.sqrt(1.0 - rho_s**2) * cfg.shadowing_sigma_db * rng.standard_normal(shape)
    rho_f = fading_coefficient(cfg.fading_doppler_hz, dt, cfg.fading_model)
    if rho_f < 1.0:
        w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        fading = rho_f * state.fading_states + np.sqrt(1.0 - rho_f**2) * w
    else:
        fading = state.fading_states
    active = rng.uniform(size=cfg.n_subnets) < cfg.duty_probability
    return replace(state, shadow_fields=shadow, fading_states=fading, active=active, rng=rng)


def advance(state: ScenarioState, dt: float | None = None) -> ScenarioState:
    """One Tx cycle: mobility, channel evolution and a fresh activity draw."""
    dt = state.config.frame_ms if dt is None else dt
    moved = step_mobility(state, dt)
    nxt = step_channel(moved, state, dt)
    return replace(nxt, cycle=state.cycle + 1)


def link_gain_db(state: ScenarioState, tx_pos, rx_pos, link_id=None) -> float:
    """Gain of one link; ``link_id=(n_tx, n_rx, sa)`` selects shadow/fading state.

    Intra-SN links (``n_tx == n_rx``) and ``link_id=None`` carry path loss only.
    """
    cfg = state.config
    dist = float(np.hypot(*(np.asarray(rx_pos, float) - np.asarray(tx_pos, float))))
    gain = -float(pathloss_db(cfg, dist))
    if link_id is not None:
        a, b, m = link_id
        if a != b:
            gain += float(state.shadow_fields[a, b, m])
            gain += 20.0 * float(np.log10(np.abs(state.fading_states[a, b, m])))
    return gain


def gain_matrix_db(state: ScenarioState) -> np.ndarray:
    """(N_tx, N_rx, M) gains from every controller to every agent."""
    dist = np.linalg.norm(_link_vectors(state), axis=-1)
    fade = 20.0 * np.log10(np.maximum(np.abs(state.fading_states), 1e-30))
    return -pathloss_db(state.config, dist) + state.shadow_fields + fade


def signal_dbm(state: ScenarioState) -> np.ndarray:
    """(N, M) received signal power of each agent from its own controller."""
    cfg = state.config
    dist = np.linalg.norm(state.sa_offsets, axis=-1)
    return cfg.tx_power_dbm - pathloss_db(cfg, dist)


def sinr_from_powers(signal, ipv, noise):
    """dB-domain SINR; a floored IPV contributes nothing."""
    return signal - 10.0 * np.log10(10.0 ** (np.asarray(ipv) / 10.0) + 10.0 ** (noise / 10.0))


def sample_cycle(state: ScenarioState) -> GroundTruth:
    """Ground truth for every (SN, SA) pair of the current cycle."""
    cfg = state.config
    mask = state.cochannel & state.active[:, None]
    ipv = _backend.aggregate_power_dbm(gain_matrix_db(state), cfg.tx_power_dbm, mask, cfg.ipv_floor_dbm)
    sig = signal_dbm(state)
    sinr = sinr_from_powers(sig, ipv, cfg.noise_power_dbm)
    interferers = tuple(tuple(np.flatnonzero(mask[:, n]).tolist()) for n in range(cfg.n_subnets))
    return GroundTruth(state.cycle, ipv, sinr, sig, interferers, state.active.copy())


def sample_interference(state: ScenarioState, slot: int) -> GroundTruth:
    """Ground truth for the agent each SN serves in ``slot`` (shape (N,)).

    SNs idle in that slot get NaN entries.
    """
    cfg = state.config
    if not 0 <= slot < cfg.n_slots:
        raise ConfigurationError(f"slot {slot} outside [0, {cfg.n_slots})")
    full = sample_cycle(state)
    sa = state.slot_schedule[:, slot]
    idx = np.arange(cfg.n_subnets)
    pick = lambda a: np.where(sa >= 0, a[idx, np.maximum(sa, 0)], np.nan)  # noqa: E731
    return GroundTruth(full.cycle, pick(full.ipv_dbm), pick(full.sinr_db), pick(full.signal_dbm),
                       full.interferer_set, full.active)


def iterate(state: ScenarioState, n_cycles: int) -> Iterable[tuple[ScenarioState, GroundTruth]]:
    """Yield ``(state, truth)`` for ``n_cycles`` consecutive cycles starting at ``state``."""
    for _ in range(n_cycles):
        yield state, sample_cycle(state)
        state = advance(state)


def write_trace_csv(path, rows: Iterable[GroundTruth]) -> int:
    """CSV with columns cycle, sn, sa, ipv_dbm, sinr_db, active; returns row count."""
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "sn", "sa", "ipv_dbm", "sinr_db", "active"])
        for gt in rows:
            n, m = gt.ipv_dbm.shape
            for i in range(n):
                for j in range(m):
                    w.writerow([gt.cycle, i, j, repr(float(gt.ipv_dbm[i, j])),
                                repr(float(gt.sinr_db[i, j])), int(gt.active[i])])
                    count += 1
    return count
