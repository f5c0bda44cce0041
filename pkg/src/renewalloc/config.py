"""Experiment configuration files (TOML).

Example::

    [utility]
    p = 0.8
    rmid = 10.0

    [users.generator]
    count = 20
    distribution = "evenly-spaced"

    [budget]
    r_tot = 400

See the README for every section and key.  Unknown keys are rejected so
typos fail loudly.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .radio_link import N0_W_PER_HZ, P_MAX_W, Q_MIN, TAU_S, W_TOTAL_HZ, quality_from_gains

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DISTRIBUTIONS = ("uniform", "evenly-spaced")


@dataclass(frozen=True)
class UtilityConfig:
    p: float = 0.8
    rmid: float = 10.0
    q_min: float = Q_MIN


@dataclass(frozen=True)
class GeneratorConfig:
    count: int = 20
    distribution: str = "evenly-spaced"
    seed: int = 0


@dataclass(frozen=True)
class UsersConfig:
    """Exactly one source of qualities: an explicit list, a generator, or link gains."""

    q: tuple | None = None
    generator: GeneratorConfig | None = None
    from_gains: bool = False


@dataclass(frozen=True)
class BudgetConfig:
    r_tot: float | None = None
    sweep: tuple | None = None


@dataclass(frozen=True)
class LinkConfig:
    W_total: float = W_TOTAL_HZ
    N: int | None = None
    N0: float = N0_W_PER_HZ
    gains: tuple | None = None
    tau: float = TAU_S
    p_max: float = P_MAX_W


@dataclass(frozen=True)
class HarvestConfig:
    mode: str = "diurnal"
    h_peak: float = 20.0
    day_length: int = 24
    daylight_fraction: float = 0.5
    noise_amplitude: float = 0.0
    seed: int = 0
    path: Path | None = None


@dataclass(frozen=True)
class ChannelConfig:
    levels: int = 8
    rho: float = 0.2


@dataclass(frozen=True)
class SimSection:
    slots: int = 100
    capacity: float = 1000.0
    initial: float = 0.0
    cap_budget: bool = True
    seed: int = 0
    per_user: bool = True
    harvest: HarvestConfig = field(default_factory=HarvestConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)


@dataclass(frozen=True)
class ExperimentConfig:
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    users: UsersConfig = field(default_factory=lambda: UsersConfig(generator=GeneratorConfig()))
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    sim: SimSection | None = None
    source: Path | None = None

    def user_q(self) -> np.ndarray:
        """Channel qualities after generation and clamping to ``[q_min, 1]``."""
        q_min = self.utility.q_min
        if self.users.q is not None:
            q = np.asarray(self.users.q, dtype=float)
        elif self.users.from_gains:
            return quality_from_gains(self.link.gains, q_min)
        else:
            gen = self.users.generator
            if gen.distribution == "evenly-spaced":
                q = np.arange(1, gen.count + 1) / gen.count
            else:
                q = np.random.default_rng(gen.seed).uniform(q_min, 1.0, gen.count)
        return np.clip(q, q_min, 1.0)

    @property
    def seed(self) -> int:
        gen = self.users.generator
        return gen.seed if gen is not None else 0


# -- validation helpers ------------------------------------------------------


def _take(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", where or None)
    extra = sorted(set(table) - set(allowed))
    if extra:
        name = f"{where}.{extra[0]}" if where else extra[0]
        raise ConfigError("unknown key", name)
    return table


def _number(table, key, where, default, *, lo=None, hi=None, lo_open=False, integer=False, allow_inf=False):
    name = f"{where}.{key}" if where else key
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", name)
    if integer and (not math.isfinite(v) or int(v) != v):
        raise ConfigError(f"expected an integer, got {v!r}", name)
    if not math.isfinite(v) and not (allow_inf and v == math.inf):
        raise ConfigError(f"must be finite, got {v!r}", name)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"must be {'>' if lo_open else '>='} {lo}, got {v!r}", name)
    if hi is not None and v > hi:
        raise ConfigError(f"must be <= {hi}, got {v!r}", name)
    return int(v) if integer else float(v)


def _bool(table, key, where, default):
    if key not in table:
        return default
    v = table[key]
    if not isinstance(v, bool):
        raise ConfigError(f"expected true/false, got {v!r}", f"{where}.{key}")
    return v


def _number_list(table, key, where, *, lo=None, hi=None, lo_open=False):
    name = f"{where}.{key}"
    v = table[key]
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty list of numbers", name)
    return tuple(_number({key: item}, key, where, None, lo=lo, hi=hi, lo_open=lo_open) for item in v)


def _utility(raw):
    t = _take(raw.get("utility", {}), {"p", "rmid", "q_min"}, "utility")
    return UtilityConfig(
        p=_number(t, "p", "utility", 0.8, lo=0, lo_open=True),
        rmid=_number(t, "rmid", "utility", 10.0, lo=0, lo_open=True),
        q_min=_number(t, "q_min", "utility", Q_MIN, lo=0, hi=1, lo_open=True),
    )


def _users(raw):
    t = _take(raw.get("users", {"generator": {}}), {"q", "generator"}, "users")
    if ("q" in t) == ("generator" in t):
        raise ConfigError("give exactly one of 'q' or 'generator'", "users")
    if "q" in t:
        return UsersConfig(q=_number_list(t, "q", "users", lo=0, hi=1, lo_open=True))
    g = _take(t["generator"], {"count", "distribution", "seed"}, "users.generator")
    dist = g.get("distribution", "evenly-spaced")
    if dist not in DISTRIBUTIONS:
        raise ConfigError(f"must be one of {', '.join(DISTRIBUTIONS)}, got {dist!r}", "users.generator.distribution")
    return UsersConfig(generator=GeneratorConfig(
        count=_number(g, "count", "users.generator", 20, lo=1, integer=True),
        distribution=dist,
        seed=_number(g, "seed", "users.generator", 0, lo=0, integer=True),
    ))


def _budget(raw):
    t = _take(raw.get("budget", {}), {"r_tot", "sweep"}, "budget")
    if "r_tot" in t and "sweep" in t:
        raise ConfigError("give at most one of 'r_tot' or 'sweep'", "budget")
    if "sweep" in t:
        return BudgetConfig(sweep=_number_list(t, "sweep", "budget", lo=0))
    return BudgetConfig(r_tot=_number(t, "r_tot", "budget", None, lo=0))


def _link(raw):
    t = _take(raw.get("link", {}), {"W_total", "N", "N0", "gains", "tau", "p_max"}, "link")
    gains = _number_list(t, "gains", "link", lo=0, lo_open=True) if "gains" in t else None
    n = _number(t, "N", "link", None, lo=1, integer=True)
    if gains is not None and n is not None and n != len(gains):
        raise ConfigError(f"N={n} but {len(gains)} gains given", "link.N")
    return LinkConfig(
        W_total=_number(t, "W_total", "link", W_TOTAL_HZ, lo=0, lo_open=True),
        N=n,
        N0=_number(t, "N0", "link", N0_W_PER_HZ, lo=0, lo_open=True),
        gains=gains,
        tau=_number(t, "tau", "link", TAU_S, lo=0, lo_open=True),
        p_max=_number(t, "p_max", "link", P_MAX_W, lo=0),
    )


def _sim(raw, base):
    if "sim" not in raw:
        return None
    t = _take(raw["sim"], {"slots", "capacity", "initial", "cap_budget", "seed", "per_user", "harvest", "channel"}, "sim")
    h = _take(t.get("harvest", {}), {"mode", "h_peak", "day_length", "daylight_fraction", "noise_amplitude", "seed", "path"}, "sim.harvest")
    mode = h.get("mode", "diurnal")
    if mode not in ("diurnal", "trace"):
        raise ConfigError(f"must be 'diurnal' or 'trace', got {mode!r}", "sim.harvest.mode")
    path = None
    if mode == "trace":
        if not isinstance(h.get("path"), str):
            raise ConfigError("trace mode needs a CSV path", "sim.harvest.path")
        path = Path(h["path"])
        if not path.is_absolute() and base is not None:
            path = base / path
    harvest = HarvestConfig(
        mode=mode,
        h_peak=_number(h, "h_peak", "sim.harvest", 20.0, lo=0),
        day_length=_number(h, "day_length", "sim.harvest", 24, lo=1, integer=True),
        daylight_fraction=_number(h, "daylight_fraction", "sim.harvest", 0.5, lo=0, hi=1, lo_open=True),
        noise_amplitude=_number(h, "noise_amplitude", "sim.harvest", 0.0, lo=0, hi=0.999999),
        seed=_number(h, "seed", "sim.harvest", 0, lo=0, integer=True),
        path=path,
    )
    c = _take(t.get("channel", {}), {"levels", "rho"}, "sim.channel")
    channel = ChannelConfig(
        levels=_number(c, "levels", "sim.channel", 8, lo=2, integer=True),
        rho=_number(c, "rho", "sim.channel", 0.2, lo=0, hi=1),
    )
    capacity = _number(t, "capacity", "sim", 1000.0, lo=0, lo_open=True, allow_inf=True)
    initial = _number(t, "initial", "sim", 0.0, lo=0)
    if initial > capacity:
        raise ConfigError(f"initial charge {initial} exceeds capacity {capacity}", "sim.initial")
    return SimSection(
        slots=_number(t, "slots", "sim", 100, lo=1, integer=True),
        capacity=capacity,
        initial=initial,
        cap_budget=_bool(t, "cap_budget", "sim", True),
        seed=_number(t, "seed", "sim", 0, lo=0, integer=True),
        per_user=_bool(t, "per_user", "sim", True),
        harvest=harvest,
        channel=channel,
    )


def config_from_dict(raw: dict, base: Path | None = None) -> ExperimentConfig:
    _take(raw, {"utility", "users", "budget", "link", "sim"}, "")
    link = _link(raw)
    if "users" not in raw and link.gains is not None:
        users = UsersConfig(from_gains=True)
    else:
        users = _users(raw)
    return ExperimentConfig(
        utility=_utility(raw),
        users=users,
        budget=_budget(raw),
        link=link,
        sim=_sim(raw, base),
    )


def parse_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment file.

    Raises :class:`ConfigError` for unreadable files, syntax errors (with
    the line) and out-of-range values (naming the field).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: syntax error: {exc}") from None
    cfg = config_from_dict(raw, base=path.parent)
    return ExperimentConfig(cfg.utility, cfg.users, cfg.budget, cfg.link, cfg.sim, source=path)
