"""OFDMA downlink link conversions: power <-> Shannon rate <-> slot energy.

Each user owns one subchannel of width ``W_total / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError

# eNodeB datasheet values (20 MHz carrier, 2 x 30 W amplifiers).
W_TOTAL_HZ = 20e6
P_MAX_W = 60.0
TAU_S = 1.0
# Thermal noise floor at 290 K.
N0_W_PER_HZ = 4e-21
Q_MIN = 0.05

__all__ = [
    "LinkParams",
    "LinkBudget",
    "rate_from_power",
    "power_from_rate",
    "energy_for_rate",
    "total_energy",
    "link_budget",
    "quality_from_gains",
    "W_TOTAL_HZ",
    "P_MAX_W",
    "TAU_S",
    "N0_W_PER_HZ",
    "Q_MIN",
]


@dataclass(frozen=True)
class LinkParams:
    channel_gains: tuple
    W_total: float = W_TOTAL_HZ
    N: int | None = None
    N0: float = N0_W_PER_HZ
    tau: float = TAU_S
    gains: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        gains = np.asarray(self.channel_gains, dtype=float).ravel()
        if gains.size == 0:
            raise ParameterError("at least one channel gain is required")
        if np.any(~np.isfinite(gains)) or np.any(gains <= 0):
            raise ParameterError("channel gains must be finite and strictly positive")
        n = gains.size if self.N is None else int(self.N)
        if n < 1:
            raise ParameterError("N must be >= 1")
        if n != gains.size:
            raise ParameterError(f"N={n} but {gains.size} channel gains given")
        if not self.W_total > 0:
            raise ParameterError("W_total must be positive")
        if not self.N0 > 0:
            raise ParameterError("N0 must be positive")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")
        object.__setattr__(self, "N", n)
        object.__setattr__(self, "channel_gains", tuple(gains.tolist()))
        object.__setattr__(self, "gains", gains)

    @property
    def W_sub(self) -> float:
        return self.W_total / self.N

    def noise_over_gain(self, k: int) -> float:
        """``N0 * W_sub / |h_k|^2``: the power that yields one bit/s/Hz."""
        return self.N0 * self.W_sub / self.gains[k]


@dataclass(frozen=True)
class LinkBudget:
    power: float
    rate: float
    energy: float


def rate_from_power(params: LinkParams, k: int, power: float) -> float:
    """Shannon rate in bit/s of user ``k`` transmitting at ``power`` watts."""
    if power < 0:
        raise DomainError(f"power must be non-negative, got {power!r}")
    snr = power / params.noise_over_gain(k)
    return params.W_sub * math.log1p(snr) / math.log(2.0)


def power_from_rate(params: LinkParams, k: int, rate: float) -> float:
    """Transmit power needed for user ``k`` to reach ``rate`` bit/s."""
    if rate < 0:
        raise DomainError(f"rate must be non-negative, got {rate!r}")
    return params.noise_over_gain(k) * math.expm1(rate / params.W_sub * math.log(2.0))


def energy_for_rate(params: LinkParams, k: int, rate: float) -> float:
    """Energy in joules spent by user ``k`` over one slot at ``rate``."""
    return power_from_rate(params, k, rate) * params.tau


def total_energy(params: LinkParams, rates) -> float:
    rates = list(rates)
    if len(rates) != params.N:
        raise DomainError(f"expected {params.N} rates, got {len(rates)}")
    return math.fsum(energy_for_rate(params, k, d) for k, d in enumerate(rates))


def link_budget(params: LinkParams, k: int, power: float) -> LinkBudget:
    return LinkBudget(power=power, rate=rate_from_power(params, k, power), energy=power * params.tau)


def quality_from_gains(gains, q_min: float = Q_MIN) -> np.ndarray:
    """Map power gains to delivery efficiencies ``|h_k|^2 / max_j |h_j|^2`` clamped to ``[q_min, 1]``."""
    g = np.asarray(gains, dtype=float)
    if g.size == 0 or np.any(g <= 0):
        raise ParameterError("gains must be non-empty and strictly positive")
    return np.clip(g / g.max(), q_min, 1.0)
