"""Least-invasive shield synthesis by binary search over a steepness-ordered family.

The violation condition of a candidate is an exact DP over [tau, T_DP]
plus the analytic geometric tail after T_DP. T_DP is the first time the
tail bound drops below the tolerance epsilon.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    CharacteristicModel,
    TailBoundParams,
    TwoGroupModel,
    find_fixpoint,
    single_group_params,
    tail_sum,
    two_group_params,
)
from .energy import Monotonic
from .errors import ParameterError, ResourceLimitError, SynthesisDiagnosticError
from .exactdp import (
    DEFAULT_EXACT_LIMIT,
    DEFAULT_MC_RUNS,
    MEASURES,
    PROBABILITY,
    ChainSpec,
    dp_value,
    dp_value_two_group,
)
from .fairness import FairnessTarget

DEFAULT_INDEX_RANGE = (1e-4, 1.0 - 1e-4)
DEFAULT_INDEX_TOL = 1e-6
DEFAULT_PROBE_POINTS = 20
DEFAULT_T_DP_CAP = 1_000_000
_MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class SynthesisInstance:
    """Measure, target, budget and tolerance plus the process parameters.

    Give ``p`` for a single group or ``groups=(r_a, p_a, p_b)`` for two
    groups; ``eta`` is required exactly in the two-group case. The search
    family is built from the bias and the target's running and limit sets.
    """

    measure: str
    target: FairnessTarget
    delta: float
    epsilon: float
    p: float | None = None
    groups: tuple[float, float, float] | None = None
    eta: float | None = None
    index_range: tuple[float, float] = DEFAULT_INDEX_RANGE
    index_tol: float = DEFAULT_INDEX_TOL
    probe_points: int = DEFAULT_PROBE_POINTS
    t_dp_cap: int = DEFAULT_T_DP_CAP
    exact_limit: int = DEFAULT_EXACT_LIMIT
    mc_runs: int = DEFAULT_MC_RUNS
    seed: int = 0

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ParameterError(f"measure must be 'P' or 'E', got {self.measure!r}")
        if not self.delta > 0 or not self.epsilon > 0:
            raise ParameterError("delta and epsilon must be positive")
        if (self.p is None) == (self.groups is None):
            raise ParameterError("give exactly one of p (single group) or groups (two groups)")
        if self.groups is not None:
            if self.eta is None:
                raise ParameterError("two-group synthesis needs eta")
            if not 0 < self.eta < self.epsilon:
                raise ParameterError("eta must lie in (0, epsilon)")
            if self.target.domain != "signed":
                raise ParameterError("two-group targets live on [-1, 1]")
        else:
            if self.eta is not None:
                raise ParameterError("eta only applies to two-group synthesis")
            if self.target.domain != "unit":
                raise ParameterError("single-group targets live on [0, 1]")
        lo, hi = self.index_range
        if not 0.0 < lo < hi < 1.0:
            raise ParameterError("index range must satisfy 0 < lo < hi < 1")
        if self.probe_points < 2:
            raise ParameterError("need at least two probe points")

    @property
    def two_group(self) -> bool:
        return self.groups is not None

    @property
    def bias(self) -> float:
        if self.groups is not None:
            return self.groups[1] - self.groups[2]
        return self.p

    @property
    def domain(self) -> str:
        return self.target.domain

    def member(self, r: float) -> Monotonic:
        t = self.target
        return Monotonic(r, self.bias, t.running, t.limit, self.domain)

    def model(self, r: float):
        zeta = self.member(r)
        if self.groups is not None:
            return TwoGroupModel(zeta, *self.groups)
        return CharacteristicModel(zeta, self.p)

    def fixpoint_range(self) -> tuple[float, float]:
        t = self.target
        b = self.bias
        if t.limit_lo <= b <= t.limit_hi:
            return (b, b)
        return t.limit

    def below_burn_in(self) -> bool:
        """True when tau is smaller than the analytic burn-in, so bounds say nothing about [tau, burn-in)."""
        return self.target.burn_in < _analytic_burn_in(self)

    def to_json(self) -> dict:
        out = {
            "measure": self.measure,
            "target": self.target.to_json(),
            "delta": self.delta,
            "epsilon": self.epsilon,
            "index_range": list(self.index_range),
            "index_tol": self.index_tol,
            "probe_points": self.probe_points,
        }
        if self.groups is not None:
            out["groups"] = list(self.groups)
            out["eta"] = self.eta
        else:
            out["p"] = self.p
        return out


@dataclass
class SynthesisOutcome:
    status: str
    index: float | None
    zeta: Monotonic | None
    condition: float
    t_dp: int
    iterations: int
    probes: list[tuple[float, float]] = field(default_factory=list)
    seconds: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.status == "found"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "index": self.index,
            "zeta": None if self.zeta is None else self.zeta.to_json(),
            "condition": self.condition,
            "t_dp": self.t_dp,
            "iterations": self.iterations,
        }


def _tail_params(inst: SynthesisInstance, mu_star: float) -> TailBoundParams:
    if inst.two_group:
        r_min = min(inst.groups[0], 1.0 - inst.groups[0])
        return two_group_params(inst.target, mu_star, r_min, inst.eta)
    return single_group_params(inst.target, mu_star)


def _analytic_burn_in(inst: SynthesisInstance) -> int:
    return max(_tail_params(inst, mu).tau for mu in inst.fixpoint_range())


def bound(t: int, inst: SynthesisInstance) -> float:
    """Worst-case tail sum from t over the family's fixpoints (eta included).

    The tail sum is convex in the fixpoint, so the endpoints of the
    fixpoint range suffice.
    """
    return max(tail_sum(t, _tail_params(inst, mu)) for mu in inst.fixpoint_range())


def choose_T_DP(inst: SynthesisInstance) -> int:
    """Smallest t at or after the burn-in with bound(t) <= epsilon."""
    start = max(inst.target.burn_in, _analytic_burn_in(inst), 1)
    eps = inst.epsilon
    if bound(start, inst) <= eps:
        return start
    cap = inst.t_dp_cap
    if bound(cap, inst) > eps:
        raise ResourceLimitError(
            f"tail bound never reaches epsilon={eps} before t={cap}; smallest reachable value is {bound(cap, inst):.6g}"
        )
    lo, hi = start, cap  # bound(lo) > eps >= bound(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid, inst) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def condition(zeta: Monotonic, t_dp: int, inst: SynthesisInstance) -> float:
    """Exact violation measure over [tau, t_dp] plus the analytic tail after t_dp.

    The tail is the family-wide worst case, which is the same for every
    member; a per-member tail would move with the fixpoint and could break
    monotonicity in r. For the probability measure the parts are combined
    by the union bound and clamped to 1. Two-group Monte Carlo prefixes add
    their standard error.
    """
    if inst.two_group:
        model = TwoGroupModel(zeta, *inst.groups)
        res = dp_value_two_group(model, inst.target, t_dp, inst.measure, inst.exact_limit, inst.mc_runs, inst.seed)
        prefix = res.value + res.stderr
    else:
        model = CharacteristicModel(zeta, inst.p)
        prefix = dp_value(ChainSpec(model, inst.target, t_dp, inst.measure), measures=inst.measure).value
    d = prefix + bound(t_dp + 1, inst)
    return min(1.0, d) if inst.measure == PROBABILITY else d


def synthesize(inst: SynthesisInstance, threads: int = 1) -> SynthesisOutcome:
    """Least steep family member whose condition is within the budget.

    Returns status "fail" when even the steepest member exceeds delta.
    Before searching, the condition is evaluated on a probe grid over the
    index range and must be non-increasing there. The bracket is then
    bisected: a member within epsilon of delta is accepted at once, and
    otherwise the search stops when the bracket is shorter than
    ``index_tol`` and returns its steep end.
    """
    started = time.perf_counter()
    t_dp = choose_T_DP(inst)
    flags = ["bounds vacuous below tau"] if inst.below_burn_in() else []
    cache: dict[float, float] = {}

    def cond(r: float) -> float:
        if r not in cache:
            zeta = inst.member(r)
            mu = find_fixpoint(inst.model(r))
            if not inst.target.in_limit(mu, 1e-9):
                raise SynthesisDiagnosticError(f"member r={r} has fixpoint {mu} outside the limit set")
            cache[r] = condition(zeta, t_dp, inst)
        return cache[r]

    def outcome(status, r, d, iterations):
        return SynthesisOutcome(status, r, None if r is None else inst.member(r), d, t_dp, iterations,
                                sorted(cache.items()), time.perf_counter() - started, flags)

    lo_r, hi_r = inst.index_range
    d_hi = cond(hi_r)
    if d_hi > inst.delta:
        return outcome("fail", None, d_hi, 0)

    grid = [float(r) for r in np.linspace(lo_r, hi_r, inst.probe_points)]
    todo = [r for r in grid if r not in cache]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for r, d in zip(todo, pool.map(lambda r: condition(inst.member(r), t_dp, inst), todo)):
                cache[r] = d
    for r in grid:
        cond(r)
    values = [cache[r] for r in grid]
    # Monte Carlo prefixes reuse one seed, so their noise is common across probes
    slack = _MONOTONE_SLACK
    for (r0, d0), (r1, d1) in zip(zip(grid, values), zip(grid[1:], values[1:])):
        if d1 > d0 + slack:
            raise SynthesisDiagnosticError(
                f"condition increases along the family: d({r0:.6g})={d0:.6g} < d({r1:.6g})={d1:.6g}"
            )

    if values[0] <= inst.delta:
        return outcome("found", grid[0], values[0], 0)
    # adjacent probes bracketing the threshold
    k = max(i for i, d in enumerate(values) if d > inst.delta)
    lo, hi = grid[k], grid[k + 1]
    d_steep = values[k + 1]
    if abs(d_steep - inst.delta) < inst.epsilon:
        return outcome("found", hi, d_steep, 0)
    iterations = 0
    while hi - lo >= inst.index_tol:
        mid = 0.5 * (lo + hi)
        d = cond(mid)
        iterations += 1
        if abs(d - inst.delta) < inst.epsilon:
            return outcome("found", mid, d, iterations)
        if d <= inst.delta:
            hi, d_steep = mid, d
        else:
            lo = mid
    return outcome("found", hi, d_steep, iterations)
