"""Slotted simulation of a base station running on harvested energy.

Each slot the station offers at most its stored energy (optionally also
capped at ``P_max * tau``) to the allocator, spends what is allocated,
banks the slot's harvest and lets every user's channel take one Markov step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import AllocationInstance, allocate
from .errors import ParameterError
from .radio_link import P_MAX_W, Q_MIN, TAU_S
from .utility_core import UserProfile, eval_user

SOLAR_PEAK_W = 20.0

SLOT_HEADER = ["slot", "harvest", "budget", "admitted", "total_utility", "battery_after"]
USER_HEADER = ["slot", "user", "q", "r", "effective", "utility"]
TRACE_HEADER = ["slot", "harvest_joules"]


@dataclass
class Battery:
    level: float
    capacity: float

    def __post_init__(self):
        if not self.capacity > 0:
            raise ParameterError("battery capacity must be positive")
        if not (0 <= self.level <= self.capacity):
            raise ParameterError(f"battery level {self.level!r} outside [0, {self.capacity!r}]")


@dataclass(frozen=True)
class TraceHarvest:
    """Replays recorded per-slot energy (joules); zero past the end."""

    trace: tuple

    def __post_init__(self):
        trace = tuple(float(v) for v in self.trace)
        if any(not (v >= 0 and math.isfinite(v)) for v in trace):
            raise ParameterError("harvest trace values must be finite and >= 0")
        object.__setattr__(self, "trace", trace)


@dataclass(frozen=True)
class DiurnalHarvest:
    """Half-sine daylight profile with multiplicative uniform noise.

    During the first ``daylight_fraction`` of each ``day_length``-slot day
    the panel delivers ``h_peak * tau * sin(pi * phase / daylight_fraction)``
    joules, scaled by ``1 + eps`` with ``eps`` uniform in
    ``[-noise_amplitude, noise_amplitude]``; the rest of the day is dark.
    """

    h_peak: float = SOLAR_PEAK_W
    day_length: int = 24
    daylight_fraction: float = 0.5
    noise_amplitude: float = 0.0
    seed: int = 0
    tau: float = TAU_S

    def __post_init__(self):
        if not self.h_peak >= 0:
            raise ParameterError("h_peak must be >= 0")
        if int(self.day_length) != self.day_length or self.day_length < 1:
            raise ParameterError("day_length must be a positive integer")
        if not (0 < self.daylight_fraction <= 1):
            raise ParameterError("daylight_fraction must lie in (0, 1]")
        if not (0 <= self.noise_amplitude < 1):
            raise ParameterError("noise_amplitude must lie in [0, 1)")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")


def harvest_at(model, t: int) -> float:
    """Energy harvested during slot ``t``; a pure function of ``(model, t)``."""
    if t < 0:
        raise ParameterError("slot index must be >= 0")
    if isinstance(model, TraceHarvest):
        return model.trace[t] if t < len(model.trace) else 0.0
    phase = (t % model.day_length) / model.day_length
    if phase >= model.daylight_fraction:
        return 0.0
    shape = math.sin(math.pi * phase / model.daylight_fraction)
    energy = model.h_peak * model.tau * max(0.0, shape)
    if model.noise_amplitude > 0:
        eps = np.random.default_rng((model.seed, t)).uniform(-model.noise_amplitude, model.noise_amplitude)
        energy *= 1.0 + eps
    return max(0.0, energy)


@dataclass
class MarkovChannel:
    """Finite-state channel shared in law by all users, each with its own state."""

    transition: np.ndarray
    q_levels: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.q_levels = np.asarray(self.q_levels, dtype=float)
        self.states = np.asarray(self.states, dtype=int)
        L = self.q_levels.size
        if L < 2:
            raise ParameterError("a Markov channel needs at least 2 states")
        if self.transition.shape != (L, L):
            raise ParameterError(f"transition must be {L}x{L}")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=1) - 1) > 1e-12):
            raise ParameterError("transition rows must be non-negative and sum to 1")
        if np.any(np.diff(self.q_levels) <= 0):
            raise ParameterError("q_levels must be strictly increasing")
        if self.q_levels[0] <= 0 or self.q_levels[-1] > 1:
            raise ParameterError("q_levels must lie in (0, 1]")
        if np.any(self.states < 0) or np.any(self.states >= L):
            raise ParameterError("channel state out of range")

    @property
    def q(self) -> np.ndarray:
        return self.q_levels[self.states]

    def stationary(self) -> np.ndarray:
        L = self.q_levels.size
        a = np.vstack([self.transition.T - np.eye(L), np.ones(L)])
        b = np.zeros(L + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(a, b, rcond=None)[0]


def birth_death_chain(levels=8, rho=0.2, q_min=Q_MIN, states=None, n_users=1):
    """Channel that moves one level up or down with probability ``rho / 2`` each.

    At the edges the blocked move turns into a stay.
    """
    if int(levels) != levels or levels < 2:
        raise ParameterError("levels must be an integer >= 2")
    if not (0 <= rho <= 1):
        raise ParameterError("rho must lie in [0, 1]")
    P = np.zeros((levels, levels))
    for i in range(levels):
        if i > 0:
            P[i, i - 1] = rho / 2
        if i < levels - 1:
            P[i, i + 1] = rho / 2
        P[i, i] = 1.0 - P[i].sum()
    if states is None:
        states = np.zeros(n_users, dtype=int)
    return MarkovChannel(P, np.linspace(q_min, 1.0, levels), states)


def channel_step(channel: MarkovChannel, rng: np.random.Generator) -> np.ndarray:
    """Next state of every user, drawn independently from the transition rows."""
    cum = np.cumsum(channel.transition, axis=1)
    draws = rng.random(channel.states.size)
    nxt = (draws[:, None] >= cum[channel.states]).sum(axis=1)
    return np.minimum(nxt, channel.q_levels.size - 1)


@dataclass
class SlotResult:
    slot: int
    harvest: float
    budget: float
    admitted: int
    total_utility: float
    battery_before: float
    battery_after: float
    spent: float
    q: np.ndarray
    r: np.ndarray
    fallback: bool = False
    # energy that would bring every user to its preferred point
    demand: float = 0.0


@dataclass
class SimConfig:
    p: float = 0.8
    rmid: float = 10.0
    p_max: float = P_MAX_W
    tau: float = TAU_S
    cap_budget: bool = True

    @property
    def budget_cap(self) -> float:
        return self.p_max * self.tau if self.cap_budget else math.inf


@dataclass
class SimState:
    battery: Battery
    harvest: object
    channel: MarkovChannel
    rng: np.random.Generator
    slot: int = 0
    config: SimConfig = field(default_factory=SimConfig)


def sim_step(state: SimState) -> SlotResult:
    """Advance one slot in place and report what happened."""
    cfg = state.config
    t = state.slot
    before = state.battery.level
    budget = min(before, cfg.budget_cap)
    q = state.channel.q.copy()
    alloc = allocate(AllocationInstance(q, budget, cfg.p, cfg.rmid))
    spent = min(math.fsum(alloc.r), budget)
    harvested = harvest_at(state.harvest, t)
    state.battery.level = min(before - spent + harvested, state.battery.capacity)
    state.channel.states = channel_step(state.channel, state.rng)
    state.slot += 1
    return SlotResult(
        slot=t,
        harvest=harvested,
        budget=budget,
        admitted=alloc.K,
        total_utility=alloc.total_utility,
        battery_before=before,
        battery_after=state.battery.level,
        spent=spent,
        q=q,
        r=alloc.r,
        fallback=alloc.fallback,
        demand=math.fsum(cfg.rmid / qk for qk in q),
    )


def sim_run(state: SimState, slots: int) -> list:
    if slots < 1:
        raise ParameterError("slots must be >= 1")
    return [sim_step(state) for _ in range(slots)]


def read_trace(path) -> TraceHarvest:
    """Load a ``slot,harvest_joules`` CSV; rows may come in any slot order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ParameterError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        rows = {}
        for line, row in enumerate(reader, start=2):
            try:
                rows[int(row["slot"])] = float(row["harvest_joules"])
            except (TypeError, ValueError) as exc:
                raise ParameterError(f"{path}:{line}: {exc}") from None
    if not rows:
        return TraceHarvest(())
    if min(rows) < 0:
        raise ParameterError(f"{path}: negative slot {min(rows)}")
    trace = [0.0] * (max(rows) + 1)
    for t, v in rows.items():
        trace[t] = v
    return TraceHarvest(tuple(trace))


def _fmt(x) -> str:
    return format(float(x), ".12g")


def write_results(results, slot_path, user_path=None, p=None, rmid=None) -> None:
    slot_path = Path(slot_path)
    with open(slot_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SLOT_HEADER)
        for res in results:
            w.writerow([res.slot, _fmt(res.harvest), _fmt(res.budget), res.admitted,
                        _fmt(res.total_utility), _fmt(res.battery_after)])
    if user_path is None:
        return
    with open(user_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(USER_HEADER)
        for res in results:
            for k, (qk, rk) in enumerate(zip(res.q, res.r)):
                u = float(eval_user(UserProfile(float(qk), p, rmid), rk))
                w.writerow([res.slot, k, _fmt(qk), _fmt(rk), _fmt(qk * rk), _fmt(u)])
