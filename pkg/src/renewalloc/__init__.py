"""Utility-maximizing allocation of harvested energy in an OFDMA cell."""

from .allocator import Allocation, AllocationInstance, allocate, allocate_prefix, sort_users
from .errors import ConfigError, DomainError, ParameterError, RefusalError
from .utility_core import SigmoidUtility, UserProfile, eval_base, eval_user, marginal_user

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "AllocationInstance",
    "allocate",
    "allocate_prefix",
    "sort_users",
    "SigmoidUtility",
    "UserProfile",
    "eval_base",
    "eval_user",
    "marginal_user",
    "ConfigError",
    "DomainError",
    "ParameterError",
    "RefusalError",
]
