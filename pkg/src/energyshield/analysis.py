"""Closed-form process analysis: characteristic and cost functions, the
fixpoint, limit cost, tail bounds and burn-in times."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergyFunction
from .errors import BoundPreconditionError, ParameterError
from .fairness import FairnessTarget, burn_in_tau_S, ceil_quotient

# K = 4**beta / 32 with beta (the sup of f') fixed at 0 for valid shields
TAIL_CONSTANT = 1.0 / 32.0
FIXPOINT_ITERATIONS = 200
_BRACKET_SLACK = 1e-9


@dataclass(frozen=True)
class CharacteristicModel:
    """Single-group process: raw acceptance probability p under energy function zeta."""

    zeta: EnergyFunction
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ParameterError(f"p must lie in (0, 1), got {self.p}")
        if self.zeta.domain != "unit":
            raise ParameterError("single-group models need an energy function on [0, 1]")

    two_group = False

    @property
    def bias(self) -> float:
        return self.p

    @property
    def pivot(self) -> float | None:
        return self.zeta.pivot

    def f(self, mu):
        z = self.zeta.eval(mu)
        below = np.asarray(mu) <= _pivot_or_edge(self)
        out = np.where(below, self.p + (1.0 - self.p) * z, self.p * (1.0 - z))
        return float(out) if out.ndim == 0 else out

    def h(self, mu):
        z = self.zeta.eval(mu)
        below = np.asarray(mu) <= _pivot_or_edge(self)
        out = np.where(below, (1.0 - self.p) * z, self.p * z)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TwoGroupModel:
    """Two groups drawn with probability r_a (group A) and acceptance rates p_a, p_b."""

    zeta: EnergyFunction
    r_a: float
    p_a: float
    p_b: float

    def __post_init__(self):
        for name in ("r_a", "p_a", "p_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.r_a < 1.0:
            raise ParameterError("both groups must have positive probability")
        if not -1.0 < self.d < 1.0:
            raise ParameterError(f"rate difference {self.d} must lie in (-1, 1)")
        if self.zeta.domain != "signed":
            raise ParameterError("two-group models need an energy function on [-1, 1]")

    two_group = True

    @property
    def r_b(self) -> float:
        return 1.0 - self.r_a

    @property
    def r_min(self) -> float:
        return min(self.r_a, self.r_b)

    @property
    def d(self) -> float:
        return self.p_a - self.p_b

    @property
    def bias(self) -> float:
        return self.d

    @property
    def pivot(self) -> float | None:
        return self.zeta.pivot

    def f(self, mu):
        d = self.d
        z = self.zeta.eval(mu)
        below = np.asarray(mu) <= _pivot_or_edge(self)
        out = np.where(below, d + (1.0 - d) * z, d - (1.0 + d) * z)
        return float(out) if out.ndim == 0 else out

    def h(self, mu):
        ra, rb, pa, pb = self.r_a, self.r_b, self.p_a, self.p_b
        z = self.zeta.eval(mu)
        below = np.asarray(mu) <= _pivot_or_edge(self)
        out = np.where(below, (ra * (1 - pa) + rb * pb) * z, (ra * pa + rb * (1 - pb)) * z)
        return float(out) if out.ndim == 0 else out


def _pivot_or_edge(model) -> float:
    # without a pivot (idle) zeta is 0 and either branch gives the bias
    k = model.zeta.pivot
    return model.zeta.bounds[1] if k is None else k


def characteristic_f(model, mu):
    return model.f(mu)


def expected_cost_h(model, mu):
    return model.h(mu)


def find_fixpoint(model) -> float:
    """Unique solution of f(mu) = mu, located by bisection between the bias and the pivot."""
    lo_dom, hi_dom = model.zeta.bounds
    k = model.zeta.pivot
    b = model.bias
    if k is None:
        lo, hi = lo_dom, hi_dom
    else:
        lo = max(lo_dom, min(b, k) - _BRACKET_SLACK)
        hi = min(hi_dom, max(b, k) + _BRACKET_SLACK)
    g_lo = model.f(lo) - lo
    if g_lo <= 0.0:
        return lo
    if model.f(hi) - hi >= 0.0:
        return hi
    for _ in range(FIXPOINT_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g = model.f(mid) - mid
        if g == 0.0:
            return mid
        if g > 0.0:
            lo = mid
        else:
            hi = mid
    # pick the endpoint with the smaller residual; they differ by one ulp here
    return lo if abs(model.f(lo) - lo) <= abs(model.f(hi) - hi) else hi


def limit_cost(model) -> float:
    return float(model.h(find_fixpoint(model)))


@dataclass(frozen=True)
class TailBoundParams:
    K: float
    tau: int
    dist_lo: float
    dist_hi: float
    eta: float = 0.0

    def __post_init__(self):
        if self.dist_lo <= 0.0 or self.dist_hi <= 0.0:
            raise BoundPreconditionError("tail bounds inapplicable: fixpoint on the running-interval boundary")

    @property
    def rate_lo(self) -> float:
        return math.exp(-self.K * self.dist_lo**2)

    @property
    def rate_hi(self) -> float:
        return math.exp(-self.K * self.dist_hi**2)


def single_group_params(target: FairnessTarget, mu_star: float) -> TailBoundParams:
    tau = burn_in_tau_S(target, mu_star)
    return TailBoundParams(TAIL_CONSTANT, tau, mu_star - target.lower, target.upper - mu_star)


def two_group_params(target: FairnessTarget, mu_star: float, r_min: float, eta: float) -> TailBoundParams:
    if not target.lower < mu_star < target.upper:
        raise BoundPreconditionError(
            f"tail bounds inapplicable: fixpoint {mu_star} is not strictly inside [{target.lower}, {target.upper}]"
        )
    tau = two_group_tau(eta, r_min)
    return TailBoundParams(r_min * TAIL_CONSTANT, tau, mu_star - target.lower, target.upper - mu_star, eta)


def _raw_bound(t: float, params: TailBoundParams) -> float:
    return params.eta + math.exp(-params.K * t * params.dist_lo**2) + math.exp(-params.K * t * params.dist_hi**2)


def tail_bound(t: int, params: TailBoundParams) -> float:
    """Bound on P[M_t outside S] at a single time t, clamped to 1."""
    if t < params.tau:
        raise BoundPreconditionError(f"below burn-in: t={t} < {params.tau}")
    return min(1.0, _raw_bound(t, params))


def tail_bound_is_vacuous(t: int, params: TailBoundParams) -> bool:
    return _raw_bound(t, params) >= 1.0


def tail_sum(T: float, params: TailBoundParams) -> float:
    """Bound on the expected number of violations from time T onwards (unclamped)."""
    if T < params.tau:
        raise BoundPreconditionError(f"below burn-in: T={T} < {params.tau}")
    if math.isinf(T):
        return params.eta
    total = params.eta
    for dist in (params.dist_lo, params.dist_hi):
        k = params.K * dist * dist
        total += math.exp(-k * T) / -math.expm1(-k)
    return total


def two_group_tau(eta: float, r_min: float) -> int:
    if not (0.0 < eta < 1.0 and 0.0 < r_min < 1.0):
        raise ParameterError("eta and r_min must lie in (0, 1)")
    return ceil_quotient((8.0 / r_min) * math.log(4.0 / eta))


@dataclass(frozen=True)
class DriftBand:
    lower: float | None
    upper: float | None

    def as_tuple(self):
        return (self.lower, self.upper)


def drift_containment(zeta: EnergyFunction, tol: float = 1e-12) -> DriftBand:
    """Band [L, R] that the running mean eventually stays in under any acceptance schedule.

    L < pivot solves zeta(L) = L and R > pivot solves zeta(R) = 1 - R. A side
    without a solution is reported as None (unbounded).
    """
    lo, hi = zeta.bounds
    k = zeta.pivot
    if k is None:
        return DriftBand(None, None)

    def root(g, a, b):
        ga, gb = g(a), g(b)
        if ga == 0.0:
            return a
        if ga * gb > 0.0:
            return None
        while b - a > tol:
            mid = 0.5 * (a + b)
            gm = g(mid)
            if gm == 0.0:
                return mid
            if (gm > 0.0) == (ga > 0.0):
                a, ga = mid, gm
            else:
                b = mid
        return 0.5 * (a + b)

    # zeta(x) - x is decreasing on the left branch, zeta(x) - (1 - x) increasing on the right
    left = root(lambda x: zeta.eval(x) - x, lo, k) if lo < k else None
    right = root(lambda x: zeta.eval(x) - (1.0 - x), k, hi) if k < hi else None
    # zeta(0) = 0 means the left curve only touches the diagonal at the edge
    if left is not None and left <= lo and zeta.eval(lo) <= 0.0:
        left = None
    if right is not None and right >= hi and zeta.eval(hi) <= 0.0:
        right = None
    return DriftBand(left, right)


def analysis_report(model, target: FairnessTarget, times, eta: float | None = None) -> dict:
    """Fixpoint, limit cost, burn-in and a bound table, as a JSON-ready dict.

    Bound rows below the burn-in are omitted; rows whose raw bound exceeds 1
    are marked vacuous.
    """
    mu_star = find_fixpoint(model)
    report = {"mu_star": mu_star, "limit_cost": limit_cost(model)}
    if model.two_group:
        if eta is None:
            raise ParameterError("two-group bounds need an explicit eta")
        params = two_group_params(target, mu_star, model.r_min, eta)
    else:
        params = single_group_params(target, mu_star)
    report["tau"] = params.tau
    flags = []
    k = model.zeta.pivot
    if k is not None and not target.lower <= k <= target.upper:
        flags.append("pivot outside running interval")
    if not target.lower <= model.bias <= target.upper:
        flags.append("bias outside running interval")
    report["preconditions"] = flags
    rows = []
    for t in times:
        t = int(t)
        if t < params.tau:
            continue
        rows.append({"t": t, "p_bound": tail_bound(t, params), "vacuous": tail_bound_is_vacuous(t, params)})
    report["bounds"] = rows
    return report
