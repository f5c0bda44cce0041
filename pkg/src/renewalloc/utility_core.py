"""Sigmoid soft-QoS utility and the marginal functions used by the allocator.

The base utility of effective energy ``x`` is::

    U(x) = q * exp(p (x - rmid))            x <  rmid
    U(x) = 1 - (1 - q) * exp(-p (x - rmid))  x >= rmid

A user with channel quality ``q_k`` receives effective energy ``q_k * r`` from
raw energy ``r``, and its utility is ``U(q_k * r)`` with ``q = q_k``.

Above its preferred raw energy ``rmid_k = rmid / q_k`` a user's marginal is
``m_k * exp(-p q_k s)`` where ``s = r - rmid_k`` is the surplus and
``m_k = p q_k (1 - q_k)``.  The allocator works exclusively on this branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "SigmoidUtility",
    "UserProfile",
    "eval_base",
    "eval_user",
    "marginal_user",
    "log_marginal_user",
    "branch_eval",
    "branch_inverse",
    "log_branch_eval",
]


def _check_params(q, p, rmid):
    if not (0.0 < q <= 1.0):
        raise ParameterError(f"q must lie in (0, 1], got {q!r}")
    if not p > 0.0:
        raise ParameterError(f"p must be positive, got {p!r}")
    if not rmid > 0.0:
        raise ParameterError(f"rmid must be positive, got {rmid!r}")


@dataclass(frozen=True)
class SigmoidUtility:
    """Parameters of the sigmoid utility in effective-energy coordinates."""

    q: float
    p: float
    rmid: float

    def __post_init__(self):
        _check_params(self.q, self.p, self.rmid)

    def __call__(self, x):
        return eval_base(self, x)


@dataclass(frozen=True)
class UserProfile:
    """One user: channel quality ``q`` plus the shared slope and preferred energy.

    Attributes
    ----------
    q : float
        Fraction of raw energy delivered to the user, in (0, 1].
    p : float
        Utility slope.
    rmid : float
        Preferred *effective* energy shared by all users.
    """

    q: float
    p: float
    rmid: float

    def __post_init__(self):
        _check_params(self.q, self.p, self.rmid)

    @property
    def utility(self) -> SigmoidUtility:
        return SigmoidUtility(self.q, self.p, self.rmid)

    @property
    def rmid_k(self) -> float:
        """Raw energy that delivers ``rmid`` to this user."""
        return self.rmid / self.q

    @property
    def m_k(self) -> float:
        """Peak of the decreasing-branch marginal (zero when q == 1)."""
        return self.p * self.q * (1.0 - self.q)

    @property
    def log_m_k(self) -> float:
        m = self.m_k
        return math.log(m) if m > 0.0 else -math.inf


def _base_scalar(q, p, rmid, x):
    d = p * (x - rmid)
    if x < rmid:
        return q * math.exp(min(d, 0.0))
    return 1.0 - (1.0 - q) * math.exp(-max(d, 0.0))


def eval_base(u: SigmoidUtility, x):
    """Evaluate ``U(x)`` for effective energy ``x >= 0`` (scalar or array)."""
    if isinstance(x, (float, int, np.floating, np.integer)):
        x = float(x)
        if x < 0:
            raise DomainError("effective energy must be non-negative")
        return _base_scalar(u.q, u.p, u.rmid, x)
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("effective energy must be non-negative")
    d = u.p * (x_arr - u.rmid)
    # Both exponents are clipped to <= 0, so nothing can overflow; very
    # negative exponents underflow to 0 and the utility saturates.
    lower = u.q * np.exp(np.minimum(d, 0.0))
    upper = 1.0 - (1.0 - u.q) * np.exp(-np.maximum(d, 0.0))
    out = np.where(x_arr < u.rmid, lower, upper)
    return float(out) if out.ndim == 0 else out


def eval_user(user: UserProfile, r):
    """Utility of raw energy ``r`` delivered to ``user``."""
    if isinstance(r, (float, int, np.floating, np.integer)):
        r = float(r)
        if r < 0:
            raise DomainError("raw energy must be non-negative")
        return _base_scalar(user.q, user.p, user.rmid, user.q * r)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("raw energy must be non-negative")
    return eval_base(user.utility, user.q * r_arr)


def log_marginal_user(user: UserProfile, r):
    """Natural log of :func:`marginal_user`; finite even where the marginal underflows.

    Returns ``-inf`` on the decreasing branch of a ``q == 1`` user.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("raw energy must be non-negative")
    q, p = user.q, user.p
    d = p * (q * r_arr - user.rmid)
    upper_scale = user.log_m_k
    lower = math.log(p * q * q) + d
    upper = upper_scale - d
    # Right-hand (decreasing-branch) value at r == rmid_k.  The branch is
    # picked in raw coordinates: q * (rmid / q) can round just below rmid.
    out = np.where(r_arr < user.rmid_k, lower, upper)
    return float(out) if out.ndim == 0 else out


def marginal_user(user: UserProfile, r):
    """Derivative of :func:`eval_user` with respect to raw energy.

    The derivative jumps at ``rmid_k`` unless ``q == 0.5``; the right-hand
    limit is returned there.
    """
    out = np.exp(log_marginal_user(user, r))
    return float(out) if np.ndim(out) == 0 else out


def log_branch_eval(user: UserProfile, s):
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("surplus must be non-negative")
    out = user.log_m_k - user.p * user.q * s_arr
    return float(out) if out.ndim == 0 else out


def branch_eval(user: UserProfile, s):
    """Decreasing-branch marginal at surplus ``s`` above ``rmid_k``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("surplus must be non-negative")
    out = user.m_k * np.exp(-user.p * user.q * s_arr)
    return float(out) if out.ndim == 0 else out


def branch_inverse(user: UserProfile, u: float) -> float:
    """Surplus at which the decreasing-branch marginal equals ``u``.

    Defined for ``0 < u <= m_k``; users with ``m_k == 0`` have an empty
    domain and must be held at ``rmid_k`` by the caller.
    """
    m = user.m_k
    if not (0.0 < u <= m):
        raise DomainError(f"marginal {u!r} outside (0, m_k={m!r}]")
    return math.log(m / u) / (user.p * user.q)
