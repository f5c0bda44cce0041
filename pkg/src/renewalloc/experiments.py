"""Command implementations behind the CLI.

Every command writes plain CSV (UTF-8, LF, 12 significant digits) with a
fixed header so results can be re-read with :func:`read_csv` or fed to any
plotting tool.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocator import AllocationInstance, allocate
from .config import ExperimentConfig
from .errors import ConfigError, RefusalError
from .harvest_sim import (
    Battery,
    DiurnalHarvest,
    SimConfig,
    SimState,
    birth_death_chain,
    read_trace,
    sim_run,
    write_results,
)
from .oracle import MAX_GRID_USERS, GridSpec, verify_instance
from .utility_core import SigmoidUtility, eval_base, eval_user, marginal_user

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCARCITY = 3
EXIT_VERIFY = 4

ALLOCATION_HEADER = ["user", "q", "rmid_k", "r", "effective", "utility", "marginal"]
FIGURE_USER_HEADER = ["p", "r_tot", "user", "q", "rmid_k", "r", "effective", "utility", "pinned"]
FIGURE_SUMMARY_HEADER = ["p", "r_tot", "admitted", "log_water_level", "total_utility", "effective_spread", "log_peak_ratio_over_p"]
VERIFY_HEADER = [
    "trial", "n", "p", "r_tot", "q", "heuristic_utility", "grid_optimum_utility", "gap",
    "constrained_grid_optimum", "constrained_gap", "quantum", "admitted", "fallback", "concave_regime",
    "budget_ok", "prefix_ok", "branch_ok", "equal_marginal_ok", "water_level_ok", "oracle_bound_ok", "passed",
]

SLOPES_FIG3 = (0.1, 0.8, 3.2, 14.0)
SLOPES_FIG78 = (0.1, 0.8, 14.0)
# figure id -> (slopes, budget)
FIGURES = {
    3: (SLOPES_FIG3, None),
    4: ((0.1,), 400.0),
    6: ((14.0,), 400.0),
    7: (SLOPES_FIG78, 1200.0),
    8: (SLOPES_FIG78, 100.0),
}
VERIFY_SLOPES = (0.1, 0.8, 3.2, 14.0)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".12g")


def write_csv(target, header, rows) -> None:
    """Write ``rows`` under ``header`` to a path, or to an open text stream."""
    if hasattr(target, "write"):
        w = csv.writer(target, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        return
    with open(target, "w", newline="", encoding="utf-8") as fh:
        write_csv(fh, header, rows)


def read_csv(path):
    """Return ``(header, rows)``; numeric cells become floats, others stay strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            row = {}
            for key, cell in zip(header, raw):
                try:
                    row[key] = float(cell)
                except ValueError:
                    row[key] = cell
            rows.append(row)
    return header, rows


# -- allocate ------------------------------------------------------------------


def instance_from_config(config: ExperimentConfig, r_tot=None, p=None) -> AllocationInstance:
    if r_tot is None:
        r_tot = config.budget.r_tot
    if r_tot is None:
        raise ConfigError("a single r_tot is required", "budget.r_tot")
    return AllocationInstance.from_q(
        config.user_q(),
        r_tot,
        p=config.utility.p if p is None else p,
        rmid=config.utility.rmid,
        q_min=config.utility.q_min,
    )


def allocation_rows(instance, alloc):
    """One row per user, best channel first."""
    for i in alloc.order if alloc.K else np.argsort(-np.asarray(instance.q), kind="stable"):
        u = instance.users[i]
        r = float(alloc.r[i])
        yield [int(i), u.q, u.rmid_k, r, u.q * r, float(eval_user(u, r)), float(marginal_user(u, r))]


def allocation_summary(alloc) -> str:
    u_a = "none" if alloc.log_u_a is None else fmt(alloc.u_a)
    log_u_a = "none" if alloc.log_u_a is None else fmt(alloc.log_u_a)
    return (
        f"K={alloc.K} u_a={u_a} log_u_a={log_u_a} "
        f"total_utility={fmt(alloc.total_utility)} fallback={int(alloc.fallback)}"
    )


def run_allocate(config: ExperimentConfig, out, strict: bool = False, log=None):
    """Allocate the configured budget; returns ``(allocation, exit_code)``."""
    instance = instance_from_config(config)
    alloc = allocate(instance)
    write_csv(out, ALLOCATION_HEADER, allocation_rows(instance, alloc))
    print(allocation_summary(alloc), file=log or sys.stderr)
    code = EXIT_SCARCITY if (strict and alloc.fallback) else EXIT_OK
    return alloc, code


# -- sweep ---------------------------------------------------------------------


def effective_spread(instance, alloc):
    """Spread of effective energy over admitted, non-pinned users and its predicted value.

    At a common water level the effective energies differ by
    ``ln(m_i / m_j) / p``, so the two numbers returned should agree.
    """
    live = [i for i in alloc.admitted if not alloc.pinned[i]] if not alloc.fallback else []
    if len(live) < 1 or alloc.log_u_a is None:
        return math.nan, math.nan
    eff = [instance.users[i].q * alloc.r[i] for i in live]
    log_m = [instance.users[i].log_m_k for i in live]
    return max(eff) - min(eff), (max(log_m) - min(log_m)) / instance.p


def figure3_rows(q=0.5, rmid=10.0, samples_to_rmid=200, slopes=SLOPES_FIG3):
    """Sampled U(x) for each slope, from 0 up to where the steepest curve saturates.

    The grid stops once the steepest curve is within 1e-10 of 1, so every
    column stays strictly increasing even after 12-digit formatting.  The
    step is ``rmid / samples_to_rmid`` and ``rmid`` itself is a sample.
    """
    tail = math.log((1.0 - q) / 1e-10) if q < 1 else 0.0
    x_hi = rmid + max(tail, 0.0) / max(slopes)
    n = int(math.floor(x_hi / rmid * samples_to_rmid)) + 1
    x = rmid * np.arange(n) / samples_to_rmid
    curves = [eval_base(SigmoidUtility(q, p, rmid), x) for p in slopes]
    for j, xj in enumerate(x):
        yield [xj] + [float(c[j]) for c in curves]


def figure3_header(slopes=SLOPES_FIG3):
    return ["x"] + [f"U_p{fmt(p)}" for p in slopes]


def figure_user_rows(config, slopes, r_tot):
    rows, summary = [], []
    for p in slopes:
        instance = instance_from_config(config, r_tot=r_tot, p=p)
        alloc = allocate(instance)
        for i in np.argsort(-np.asarray(instance.q), kind="stable"):
            u = instance.users[i]
            r = float(alloc.r[i])
            rows.append([p, r_tot, int(i), u.q, u.rmid_k, r, u.q * r, float(eval_user(u, r)), bool(alloc.pinned[i])])
        spread, predicted = effective_spread(instance, alloc)
        summary.append([p, r_tot, alloc.K, math.nan if alloc.log_u_a is None else alloc.log_u_a,
                        alloc.total_utility, spread, predicted])
    return rows, summary


def run_sweep(config: ExperimentConfig, figure: int, outdir, p=None, r_tot=None, q_curve=0.5):
    """Write the CSV data behind one figure; returns the written paths.

    ``p`` and ``r_tot`` override the figure's slope(s) and budget, so e.g.
    figure 4 with ``p=0.8`` gives the intermediate-slope panel.  Without
    ``r_tot``, a ``[budget] sweep`` list in the config replaces the
    figure's budget with every listed value.
    """
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    slopes, budget = FIGURES[figure]
    if p is not None:
        slopes = (float(p),)
    if figure == 3:
        path = outdir / "fig3.csv"
        write_csv(path, figure3_header(slopes), figure3_rows(q_curve, config.utility.rmid, slopes=slopes))
        return [path]
    if r_tot is not None:
        budgets = [float(r_tot)]
    elif config.budget.sweep:
        budgets = list(config.budget.sweep)
    else:
        budgets = [budget]
    rows, summary = [], []
    for b in budgets:
        part, part_summary = figure_user_rows(config, slopes, b)
        rows += part
        summary += part_summary
    path = outdir / f"fig{figure}.csv"
    spath = outdir / f"fig{figure}_summary.csv"
    write_csv(path, FIGURE_USER_HEADER, rows)
    write_csv(spath, FIGURE_SUMMARY_HEADER, summary)
    return [path, spath]


# -- simulate --------------------------------------------------------------------


def build_sim_state(config: ExperimentConfig) -> SimState:
    sim = config.sim
    if sim is None:
        raise ConfigError("the simulate command needs a [sim] section", "sim")
    h = sim.harvest
    if h.mode == "trace":
        try:
            harvest = read_trace(h.path)
        except OSError as exc:
            raise ConfigError(f"cannot read trace {h.path}: {exc.strerror or exc}", "sim.harvest.path") from None
        except ValueError as exc:
            raise ConfigError(str(exc), "sim.harvest.path") from None
    else:
        harvest = DiurnalHarvest(h.h_peak, h.day_length, h.daylight_fraction, h.noise_amplitude, h.seed, config.link.tau)
    channel = birth_death_chain(sim.channel.levels, sim.channel.rho, q_min=config.utility.q_min)
    # start each user in the level closest to its configured quality
    q0 = config.user_q()
    channel.states = np.abs(channel.q_levels[None, :] - q0[:, None]).argmin(axis=1)
    return SimState(
        battery=Battery(sim.initial, sim.capacity),
        harvest=harvest,
        channel=channel,
        rng=np.random.default_rng(sim.seed),
        config=SimConfig(config.utility.p, config.utility.rmid, config.link.p_max, config.link.tau, sim.cap_budget),
    )


@dataclass
class SimSummary:
    slots: int
    mean_budget: float
    mean_demand: float
    scarce_fraction: float
    fallback_fraction: float

    def __str__(self):
        return (
            f"slots={self.slots} mean_budget={fmt(self.mean_budget)} mean_demand={fmt(self.mean_demand)} "
            f"scarce_fraction={fmt(self.scarce_fraction)} fallback_fraction={fmt(self.fallback_fraction)}"
        )


def summarize(results) -> SimSummary:
    n = len(results)
    return SimSummary(
        slots=n,
        mean_budget=math.fsum(r.budget for r in results) / n,
        mean_demand=math.fsum(r.demand for r in results) / n,
        scarce_fraction=sum(r.budget < r.demand for r in results) / n,
        fallback_fraction=sum(r.fallback for r in results) / n,
    )


def run_simulate(config: ExperimentConfig, outdir, log=None):
    """Run the configured simulation; writes ``slots.csv`` (and ``users.csv``)."""
    state = build_sim_state(config)
    results = sim_run(state, config.sim.slots)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    user_path = outdir / "users.csv" if config.sim.per_user else None
    write_results(results, outdir / "slots.csv", user_path, p=config.utility.p, rmid=config.utility.rmid)
    summary = summarize(results)
    print(summary, file=log or sys.stderr)
    return results, summary


# -- verify ----------------------------------------------------------------------


def random_instance(rng: np.random.Generator, n: int, rmid: float = 10.0) -> AllocationInstance:
    """Random instance with budget between a quarter and twice the total preferred energy."""
    q = rng.uniform(0.05, 0.99, n)
    p = float(rng.choice(VERIFY_SLOPES))
    demand = math.fsum(rmid / q)
    r_tot = float(rng.uniform(0.25, 2.0)) * demand
    return AllocationInstance(q, r_tot, p, rmid)


def report_row(trial, instance, rep):
    c = rep.checks
    return [
        trial, instance.n, instance.p, instance.r_tot, ";".join(fmt(v) for v in instance.q),
        rep.heuristic_utility, rep.grid_optimum_utility, rep.gap,
        rep.constrained_grid_optimum, rep.constrained_gap, rep.quantum, rep.K, rep.fallback,
        rep.concave_regime, c["budget"], c["prefix"], c["branch"], c["equal_marginal"],
        c["water_level"], c["oracle_bound"], rep.passed,
    ]


def run_verify(n: int, trials: int, resolution: int, seed: int, out, log=None):
    """Check ``trials`` seeded random instances against the grid oracle.

    Returns ``(reports, exit_code)``; the exit code is 4 if any check failed.
    """
    if n > MAX_GRID_USERS:
        raise RefusalError(f"verify supports at most {MAX_GRID_USERS} users, got {n}")
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    rng = np.random.default_rng(seed)
    grid = GridSpec(resolution)
    reports, rows = [], []
    for trial in range(trials):
        instance = random_instance(rng, n)
        rep = verify_instance(instance, grid)
        reports.append((instance, rep))
        rows.append(report_row(trial, instance, rep))
    write_csv(out, VERIFY_HEADER, rows)
    failed = sum(not rep.passed for _, rep in reports)
    gaps = [rep.gap for _, rep in reports]
    concave = [rep.gap for _, rep in reports if rep.concave_regime]
    print(
        f"trials={trials} passed={trials - failed} failed={failed} "
        f"max_gap={fmt(max(gaps))} concave_trials={len(concave)} "
        f"max_concave_gap={fmt(max(concave)) if concave else 'nan'}",
        file=log or sys.stderr,
    )
    return reports, EXIT_VERIFY if failed else EXIT_OK
