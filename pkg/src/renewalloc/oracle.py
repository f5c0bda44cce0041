"""Brute-force references for checking the allocator.

Nothing here reuses the allocator's closed forms: water levels are found by
bisection, and the allocation itself by enumerating every way of splitting
the budget into equal quanta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocationInstance, allocate, log_water_level, sort_users
from .errors import DomainError, ParameterError, RefusalError
from .utility_core import eval_user, log_marginal_user

MAX_GRID_USERS = 4

__all__ = [
    "GridSpec",
    "GridResult",
    "VerificationReport",
    "bisect_log_water_level",
    "bisect_water_level",
    "grid_search",
    "verify_instance",
    "check_allocation",
]


def _surplus_sum(admitted, log_u, clamp):
    total = 0.0
    for user in admitted:
        if user.m_k <= 0:
            continue
        s = (user.log_m_k - log_u) / (user.p * user.q)
        total += max(s, 0.0) if clamp else s
    return total


def bisect_log_water_level(admitted, res, tol=1e-12, clamp=False, max_iter=400):
    """Find ``ln u`` with ``sum_k s_k(u) == res`` by bisection.

    ``clamp=False`` extends every inverse branch below zero surplus, which is
    the level the unconstrained closed form solves for.  ``clamp=True`` uses
    ``max(s_k, 0)``: users whose peak marginal lies below the level then drop
    out, giving the level of the non-negative water-filling problem.

    ``tol`` is the absolute tolerance on ``ln u``, i.e. a relative tolerance
    on ``u``.
    """
    if len(admitted) == 0:
        raise DomainError("admitted set is empty")
    if res < 0:
        raise DomainError(f"residual must be non-negative, got {res!r}")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    live = [u for u in admitted if u.m_k > 0]
    if not live:
        raise DomainError("no admitted user has a decreasing branch")
    if clamp and res == 0:
        return max(u.log_m_k for u in live)
    hi = max(u.log_m_k for u in live)
    lo = min(u.log_m_k for u in live) - res * max(u.p * u.q for u in live) - 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _surplus_sum(admitted, mid, clamp) > res:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def bisect_water_level(admitted, res, tol=1e-12, clamp=False):
    return math.exp(bisect_log_water_level(admitted, res, tol=tol, clamp=clamp))


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 2000

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 100:
            raise ParameterError("grid resolution must be an integer >= 100")

    def quantum(self, r_tot: float) -> float:
        q = r_tot / self.resolution
        if not q > 0:
            raise ParameterError("grid quantum must be positive (r_tot > 0)")
        return q


@dataclass
class GridResult:
    r: np.ndarray | None
    utility: float
    quantum: float

    @property
    def feasible(self) -> bool:
        return self.r is not None


def _utility_table(instance, grid, constrained):
    quantum = grid.quantum(instance.r_tot)
    levels = np.arange(grid.resolution + 1) * quantum
    table = np.empty((instance.n, grid.resolution + 1))
    for k, user in enumerate(instance.users):
        row = np.asarray(eval_user(user, levels), dtype=float)
        if constrained:
            # only zero or at least rmid_k (decreasing branch)
            forbidden = (levels > 0) & (levels < user.rmid_k * (1 - 1e-12))
            row[forbidden] = -np.inf
        table[k] = row
    return table, quantum


def _best_split(table, budget, n_parts):
    """Best (utility, split) of ``budget`` quanta over the last ``n_parts`` rows.

    Splits are scanned in lexicographic order and the first maximum wins.
    """
    rows = table[-n_parts:]
    if n_parts == 1:
        return rows[0, budget], [budget]
    if n_parts == 2:
        a = np.arange(budget + 1)
        vals = rows[0, a] + rows[1, budget - a]
        j = int(np.argmax(vals))
        return vals[j], [j, budget - j]
    best_val, best_split = -np.inf, None
    for a0 in range(budget + 1):
        val, rest = _best_split(table, budget - a0, n_parts - 1)
        val = rows[0, a0] + val
        if val > best_val:
            best_val, best_split = val, [a0] + rest
    return best_val, best_split


def grid_search(instance: AllocationInstance, grid: GridSpec = GridSpec(), constrained: bool = False) -> GridResult:
    """Exhaustive search over all splits of the budget into ``grid.resolution`` quanta.

    Utilities are increasing, so only splits that spend the whole budget are
    enumerated.  With ``constrained=True`` each user gets either nothing or at
    least ``rmid_k``; if no such split exists the result is infeasible with
    utility ``-inf``.
    """
    if instance.n > MAX_GRID_USERS:
        raise RefusalError(f"grid search is limited to {MAX_GRID_USERS} users, got {instance.n}")
    table, quantum = _utility_table(instance, grid, constrained)
    # summing tables can reach -inf; utilities themselves are finite
    val, split = _best_split(table, grid.resolution, instance.n)
    if not np.isfinite(val):
        return GridResult(None, -math.inf, quantum)
    r = np.asarray(split, dtype=float) * quantum
    # recompute at full precision rather than trusting the table sum order
    utility = math.fsum(float(eval_user(u, rk)) for u, rk in zip(instance.users, r))
    return GridResult(r, utility, quantum)


@dataclass
class VerificationReport:
    heuristic_utility: float
    grid_optimum_utility: float
    constrained_grid_optimum: float
    quantum: float
    K: int
    fallback: bool
    concave_regime: bool
    checks: dict = field(default_factory=dict)
    grid_r: np.ndarray | None = None
    heuristic_r: np.ndarray | None = None

    @property
    def gap(self) -> float:
        return self.grid_optimum_utility - self.heuristic_utility

    @property
    def constrained_gap(self) -> float:
        return self.constrained_grid_optimum - self.heuristic_utility

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def check_allocation(instance, alloc, marginal_rtol=1e-6, budget_rtol=1e-9):
    """Evaluate the allocator's structural guarantees on ``alloc``.

    Returns a dict of named boolean checks.
    """
    r = np.asarray(alloc.r)
    checks = {}
    if alloc.K >= 1:
        checks["budget"] = abs(math.fsum(r) - instance.r_tot) <= budget_rtol * max(instance.r_tot, 1e-300)
    else:
        checks["budget"] = instance.r_tot == 0 and not r.any()

    # funded users must be exactly the first k of the q-descending order
    funded = np.flatnonzero(r > 0)
    checks["prefix"] = set(funded.tolist()) == set(sort_users(instance)[: len(funded)].tolist())

    branch_ok = True
    marginal_ok = True
    for i in alloc.admitted:
        user = instance.users[i]
        if alloc.fallback:
            continue
        if r[i] < user.rmid_k * (1 - 1e-12):
            branch_ok = False
        if alloc.log_u_a is not None and not alloc.pinned[i]:
            diff = float(log_marginal_user(user, r[i])) - alloc.log_u_a
            if abs(math.expm1(diff)) > marginal_rtol:
                marginal_ok = False
    checks["branch"] = branch_ok
    checks["equal_marginal"] = marginal_ok
    return checks


def verify_instance(instance: AllocationInstance, grid: GridSpec = GridSpec()) -> VerificationReport:
    """Compare the heuristic against both grid optima and run its invariant checks."""
    alloc = allocate(instance)
    full = grid_search(instance, grid)
    restricted = grid_search(instance, grid, constrained=True)
    checks = check_allocation(instance, alloc)

    if alloc.K >= 1 and not alloc.fallback and alloc.log_u_a is not None:
        live = [i for i in alloc.admitted if not alloc.pinned[i]]
        admitted = [instance.users[i] for i in live]
        res = math.fsum(alloc.r[i] - instance.users[i].rmid_k for i in live)
        closed = log_water_level(admitted, res)
        bisected = bisect_log_water_level(admitted, res)
        checks["water_level"] = abs(math.expm1(closed - bisected)) <= 1e-9
    else:
        checks["water_level"] = True

    concave = bool(
        full.feasible
        and all(rk >= u.rmid_k for u, rk in zip(instance.users, full.r))
    )
    max_m = max(u.m_k for u in instance.users)
    if concave:
        checks["oracle_bound"] = alloc.total_utility >= full.utility - full.quantum * max_m
    else:
        checks["oracle_bound"] = True
    checks["grid_order"] = (not restricted.feasible) or full.utility >= restricted.utility - 1e-12

    return VerificationReport(
        heuristic_utility=alloc.total_utility,
        grid_optimum_utility=full.utility,
        constrained_grid_optimum=restricted.utility,
        quantum=full.quantum,
        K=alloc.K,
        fallback=alloc.fallback,
        concave_regime=concave,
        checks=checks,
        grid_r=full.r,
        heuristic_r=alloc.r,
    )
