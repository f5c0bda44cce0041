"""Marginal-utility water-filling allocation of a renewable energy budget.

Users are ranked by channel quality (best first) and admitted as a growing
prefix.  Each admitted user first receives its preferred raw energy
``rmid_k``; the residual budget is then split so every admitted user sits at
the same decreasing-branch marginal (the water level).  Admission stops as
soon as adding the next user lowers the total utility, or the next user's
``rmid_k`` no longer fits in the budget.

Water levels are handled in log space: with steep slopes and large budgets
the level itself underflows double precision long before the surpluses do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError
from .radio_link import Q_MIN
from .utility_core import UserProfile, eval_user

__all__ = [
    "AllocationInstance",
    "Allocation",
    "ActiveSet",
    "sort_users",
    "water_level",
    "log_water_level",
    "refine_active_set",
    "allocate_prefix",
    "allocate",
    "total_utility",
]


@dataclass(frozen=True)
class AllocationInstance:
    """One slot's problem: user qualities, shared utility shape and the budget."""

    q: tuple
    r_tot: float
    p: float = 0.8
    rmid: float = 10.0

    def __post_init__(self):
        q = tuple(float(v) for v in np.asarray(self.q, dtype=float).ravel())
        if not q:
            raise ParameterError("an instance needs at least one user")
        if not (self.r_tot >= 0 and math.isfinite(self.r_tot)):
            raise ParameterError(f"r_tot must be finite and >= 0, got {self.r_tot!r}")
        object.__setattr__(self, "q", q)
        # validates every q together with p and rmid
        object.__setattr__(self, "_users", tuple(UserProfile(v, self.p, self.rmid) for v in q))

    @classmethod
    def from_q(cls, q, r_tot, p=0.8, rmid=10.0, q_min=Q_MIN):
        """Build an instance after clamping qualities to ``[q_min, 1]``."""
        return cls(tuple(np.clip(np.asarray(q, dtype=float), q_min, 1.0)), r_tot, p, rmid)

    @property
    def users(self) -> tuple:
        return self._users

    @property
    def n(self) -> int:
        return len(self.q)

    def with_budget(self, r_tot: float) -> "AllocationInstance":
        return AllocationInstance(self.q, r_tot, self.p, self.rmid)


@dataclass
class ActiveSet:
    """Water-filling result for a fixed admitted set.

    ``surplus[i]`` is the energy above ``rmid_k`` given to the i-th admitted
    user; ``pinned[i]`` marks users held at zero surplus because the water
    level sits above their peak marginal.  ``log_u_a`` is ``None`` only when
    every admitted user has ``m_k == 0``.
    """

    surplus: np.ndarray
    pinned: np.ndarray
    log_u_a: float | None
    iterations: int = 1

    @property
    def u_a(self) -> float | None:
        return None if self.log_u_a is None else math.exp(self.log_u_a)


@dataclass
class Allocation:
    r: np.ndarray
    K: int
    order: np.ndarray
    total_utility: float
    res: float
    log_u_a: float | None = None
    pinned: np.ndarray = field(default=None)
    fallback: bool = False
    prefix_utilities: dict | None = None

    def __post_init__(self):
        if self.pinned is None:
            self.pinned = np.zeros(len(self.r), dtype=bool)

    @property
    def u_a(self) -> float | None:
        return None if self.log_u_a is None else math.exp(self.log_u_a)

    @property
    def admitted(self) -> np.ndarray:
        """Original indices of admitted users, best channel first."""
        return self.order[: self.K]

    @property
    def spent(self) -> float:
        return math.fsum(self.r)


def sort_users(instance) -> np.ndarray:
    """Indices ordered by channel quality, best first; ties keep input order."""
    q = np.asarray(instance.q if hasattr(instance, "q") else instance, dtype=float)
    return np.argsort(-q, kind="stable")


def total_utility(instance: AllocationInstance, r) -> float:
    r = np.asarray(r, dtype=float)
    return math.fsum(float(eval_user(u, rk)) for u, rk in zip(instance.users, r))


def _check_admitted(admitted, res):
    if len(admitted) == 0:
        raise DomainError("admitted set is empty")
    if res < 0:
        raise DomainError(f"residual must be non-negative, got {res!r}")


def log_water_level(admitted, res: float) -> float:
    """Log of the common marginal at which the admitted surpluses add up to ``res``.

    Each surplus is ``(ln m_k - ln u) / (p q_k)``, so the total is linear in
    ``ln u`` and the level has a closed form.  The inverse branches are
    extended past ``m_k`` here; :func:`refine_active_set` deals with users
    whose surplus comes out negative.
    """
    _check_admitted(admitted, res)
    if any(u.m_k <= 0 for u in admitted):
        raise DomainError("users with m_k == 0 have no decreasing branch; pin them first")
    w = [1.0 / (u.p * u.q) for u in admitted]
    num = math.fsum(u.log_m_k * wk for u, wk in zip(admitted, w)) - res
    return num / math.fsum(w)


def water_level(admitted, res: float) -> float:
    return math.exp(log_water_level(admitted, res))


def refine_active_set(admitted, res: float) -> ActiveSet:
    """Water-fill ``res`` over ``admitted`` keeping every surplus non-negative.

    Users whose unconstrained surplus would be negative (equivalently
    ``u_a > m_k``) are pinned at zero surplus and the rest re-solved with the
    same residual.  A user pinned this way is also inactive at the true
    level, since removing it can only lower the level further, so pinning a
    whole batch per round is safe and the loop ends within ``len(admitted)``
    rounds.
    """
    _check_admitted(admitted, res)
    n = len(admitted)
    pq = np.array([u.p * u.q for u in admitted])
    log_m = np.array([u.log_m_k for u in admitted])
    pinned = ~np.isfinite(log_m)
    surplus = np.zeros(n)

    iterations = 0
    while True:
        free = ~pinned
        if not free.any():
            # Only q == 1 users remain; their utility is flat above rmid_k so
            # the residual is shared out without changing the total.
            surplus[:] = res / n
            return ActiveSet(surplus, pinned, None, iterations)
        iterations += 1
        w = 1.0 / pq[free]
        log_u = (math.fsum(log_m[free] * w) - res) / math.fsum(w)
        s_free = (log_m[free] - log_u) / pq[free]
        # a user sitting exactly at its peak can come out at -1e-17
        tol = 1e-12 * (res + float(np.max(np.abs(log_m[free] / pq[free]))))
        negative = s_free < -tol
        if not negative.any():
            surplus[:] = 0.0
            surplus[free] = np.maximum(s_free, 0.0)
            total = math.fsum(surplus)
            if total > 0:
                surplus *= res / total
            else:
                surplus[int(np.flatnonzero(free)[0])] = res
            # leftover drift is ulp-sized; the largest share absorbs it
            drift = res - math.fsum(surplus)
            surplus[int(np.argmax(surplus))] += drift
            return ActiveSet(surplus, pinned, float(log_u), iterations)
        idx = np.flatnonzero(free)
        pinned[idx[negative]] = True


def allocate_prefix(instance: AllocationInstance, K: int, order=None) -> Allocation | None:
    """Fund the ``K`` best-channel users; ``None`` when their ``rmid_k`` exceed the budget."""
    n = instance.n
    if not (1 <= K <= n):
        raise DomainError(f"K must lie in [1, {n}], got {K!r}")
    if order is None:
        order = sort_users(instance)
    admitted = [instance.users[i] for i in order[:K]]
    res = instance.r_tot - math.fsum(u.rmid_k for u in admitted)
    if res < 0:
        return None
    active = refine_active_set(admitted, res)
    r = np.zeros(n)
    pinned = np.zeros(n, dtype=bool)
    for j, i in enumerate(order[:K]):
        r[i] = admitted[j].rmid_k + active.surplus[j]
        pinned[i] = active.pinned[j]
    return Allocation(
        r=r,
        K=K,
        order=np.asarray(order),
        total_utility=total_utility(instance, r),
        res=res,
        log_u_a=active.log_u_a,
        pinned=pinned,
    )


def _scarcity_fallback(instance: AllocationInstance, order) -> Allocation:
    # Nobody's rmid_k fits: give the whole budget to the single user who
    # gains most from it (on the increasing branch).
    values = [float(eval_user(instance.users[i], instance.r_tot)) for i in order]
    best = int(order[int(np.argmax(values))])
    r = np.zeros(instance.n)
    r[best] = instance.r_tot
    # keep `order` so the funded user is listed first in admitted
    order = np.array([best] + [int(i) for i in order if i != best], dtype=int)
    return Allocation(
        r=r,
        K=1,
        order=order,
        total_utility=total_utility(instance, r),
        res=instance.r_tot - instance.users[best].rmid_k,
        fallback=True,
    )


def allocate(instance: AllocationInstance, diagnostics: bool = False) -> Allocation:
    """Run the prefix-growing heuristic and return the chosen allocation.

    The prefix grows while the total utility does not drop (a tie keeps
    growing).  With ``diagnostics=True`` the utility of every feasible prefix
    is recorded in ``prefix_utilities`` even past the stopping point, which
    shows whether the early stop skipped a better prefix.

    An empty budget returns the all-zero allocation with ``K == 0`` and total
    utility 0 (the reference point from which the first gain is measured).
    """
    order = sort_users(instance)
    if instance.r_tot == 0:
        return Allocation(r=np.zeros(instance.n), K=0, order=order, total_utility=0.0, res=0.0)

    best = None
    previous = 0.0
    history = {}
    stopped = False
    for K in range(1, instance.n + 1):
        cand = allocate_prefix(instance, K, order)
        if cand is None:
            break
        history[K] = cand.total_utility
        if stopped:
            continue
        if cand.total_utility - previous < 0:
            stopped = True
            if not diagnostics:
                break
            continue
        best = cand
        previous = cand.total_utility

    if best is None:
        best = _scarcity_fallback(instance, order)
    if diagnostics:
        best.prefix_utilities = history
    return best
