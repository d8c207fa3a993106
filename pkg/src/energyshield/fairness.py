"""Fairness targets and running-average bookkeeping.

Counts are kept as integers and means are derived on demand, so long runs
do not accumulate floating-point drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BoundPreconditionError, ParameterError

UNIT = (0.0, 1.0)
SIGNED = (-1.0, 1.0)

# guards ceil() against quotients like 4/0.09999999999999998
_CEIL_SLACK = 1e-9


def domain_bounds(domain: str) -> tuple[float, float]:
    if domain == "unit":
        return UNIT
    if domain == "signed":
        return SIGNED
    raise ParameterError(f"unknown domain {domain!r}; expected 'unit' or 'signed'")


@dataclass(frozen=True)
class FairnessTarget:
    """Burn-in time, running interval [lower, upper] and limit set [limit_lo, limit_hi].

    A singleton limit set is written with ``limit_lo == limit_hi``.
    """

    burn_in: int
    lower: float
    upper: float
    limit_lo: float
    limit_hi: float
    domain: str = "unit"

    def __post_init__(self):
        lo, hi = domain_bounds(self.domain)
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ParameterError(f"burn_in must be a nonnegative integer, got {self.burn_in}")
        object.__setattr__(self, "burn_in", int(self.burn_in))
        if not self.lower <= self.upper:
            raise ParameterError(f"running interval is empty: [{self.lower}, {self.upper}]")
        if not self.limit_lo <= self.limit_hi:
            raise ParameterError(f"limit set is empty: [{self.limit_lo}, {self.limit_hi}]")
        if not (lo <= self.lower and self.upper <= hi):
            raise ParameterError(f"running interval [{self.lower}, {self.upper}] leaves the domain [{lo}, {hi}]")
        if not (self.lower <= self.limit_lo and self.limit_hi <= self.upper):
            raise ParameterError("limit set must lie inside the running interval")

    @classmethod
    def make(cls, burn_in: int, running, limit, domain: str = "unit") -> "FairnessTarget":
        """Build from ``running=(L, U)`` and ``limit`` given as a number or a pair."""
        if isinstance(limit, (int, float)):
            limit = (limit, limit)
        return cls(burn_in, float(running[0]), float(running[1]), float(limit[0]), float(limit[1]), domain)

    @property
    def running(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def limit(self) -> tuple[float, float]:
        return (self.limit_lo, self.limit_hi)

    def in_limit(self, value: float, tol: float = 0.0) -> bool:
        return self.limit_lo - tol <= value <= self.limit_hi + tol

    def with_burn_in(self, burn_in: int) -> "FairnessTarget":
        return FairnessTarget(burn_in, self.lower, self.upper, self.limit_lo, self.limit_hi, self.domain)

    def to_json(self) -> dict:
        return {
            "burn_in": self.burn_in,
            "running": [self.lower, self.upper],
            "limit": [self.limit_lo, self.limit_hi],
            "domain": self.domain,
        }


@dataclass(frozen=True)
class RunningMeanState:
    t: int = 0
    count_ones: int = 0

    @property
    def mean(self) -> float:
        return self.count_ones / self.t if self.t else 0.0


def update_mean(state: RunningMeanState, z: int) -> RunningMeanState:
    if z not in (0, 1):
        raise ValueError(f"decision must be 0 or 1, got {z!r}")
    return RunningMeanState(state.t + 1, state.count_ones + z)


@dataclass(frozen=True)
class TwoGroupState:
    n_a: int = 0
    s_a: int = 0
    n_b: int = 0
    s_b: int = 0

    @property
    def t(self) -> int:
        return self.n_a + self.n_b

    @property
    def defined(self) -> bool:
        return self.n_a > 0 and self.n_b > 0

    @property
    def value(self) -> float | None:
        """Acceptance-rate difference of group A minus group B, None until both groups appear."""
        if not self.defined:
            return None
        return self.s_a / self.n_a - self.s_b / self.n_b


def update_two_group(state: TwoGroupState, g: str, z: int) -> TwoGroupState:
    if z not in (0, 1):
        raise ValueError(f"decision must be 0 or 1, got {z!r}")
    if g == "A":
        return TwoGroupState(state.n_a + 1, state.s_a + z, state.n_b, state.s_b)
    if g == "B":
        return TwoGroupState(state.n_a, state.s_a, state.n_b + 1, state.s_b + z)
    raise ValueError(f"group must be 'A' or 'B', got {g!r}")


def point_fair(value: float, target: FairnessTarget) -> bool:
    return target.lower <= value <= target.upper


def ceil_quotient(x: float) -> int:
    return math.ceil(x - _CEIL_SLACK)


def burn_in_tau_S(target: FairnessTarget, mu_star: float) -> int:
    """Earliest time from which the single-group tail bound applies."""
    gap = min(abs(target.lower - mu_star), abs(target.upper - mu_star))
    if not (target.lower < mu_star < target.upper) or gap <= 0.0:
        raise BoundPreconditionError(
            f"tail bounds inapplicable: fixpoint {mu_star} is not strictly inside [{target.lower}, {target.upper}]"
        )
    return ceil_quotient(4.0 / gap)
