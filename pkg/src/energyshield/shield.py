"""Online shield engine.

An engine consumes one raw decision at a time together with an injected
uniform draw and emits the shielded decision. Randomness never lives in
the engine, so a stream plus its draws fully determines the output.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .energy import EnergyFunction, Exponential, Idle, Polynomial, calibrated_pivot
from .errors import ParameterError
from .fairness import (
    FairnessTarget,
    RunningMeanState,
    TwoGroupState,
    update_mean,
    update_two_group,
)


class Mode(enum.Enum):
    KNOWN = "known"
    TWO_GROUP = "two_group"
    ADAPTIVE = "adaptive"
    DRIFT = "drift"
    NAIVE = "naive"
    IDLE = "idle"


SINGLE_MODES = (Mode.KNOWN, Mode.ADAPTIVE, Mode.DRIFT, Mode.NAIVE, Mode.IDLE)


@dataclass(frozen=True)
class StepRecord:
    t: int
    group: str | None
    x: int
    y: int
    z: int
    m: float | None
    nu: float

    def csv_row(self) -> list[str]:
        return [
            str(self.t),
            self.group or "",
            str(self.x),
            str(self.y),
            str(self.z),
            "" if self.m is None else f"{self.m:.12g}",
            f"{self.nu:.12g}",
        ]


CSV_HEADER = ["t", "group", "x", "y", "z", "m", "nu"]


def _bit(x, where: str) -> int:
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)) and x in (0, 1):
        return int(x)
    raise ValueError(f"{where}: decision must be 0 or 1, got {x!r}")


class ShieldEngine:
    """Stateful shield for a single stream.

    Build with the classmethods; each mode fixes which ``step_*`` method
    applies. ``fresh()`` returns an engine with the same configuration and
    empty state.
    """

    def __init__(self, mode: Mode, zeta: EnergyFunction | None = None, *, target: FairnessTarget | None = None,
                 mu_star: float | None = None):
        self.mode = mode
        self.zeta = zeta if zeta is not None else Idle("signed" if mode is Mode.TWO_GROUP else "unit")
        self.target = target
        self.mu_star = mu_star
        if mode is Mode.NAIVE and target is None:
            raise ParameterError("naive shield needs a fairness target")
        if mode is Mode.ADAPTIVE:
            if not isinstance(self.zeta, (Polynomial, Exponential)) or mu_star is None:
                raise ParameterError("adaptive shield needs a polynomial or exponential shape and mu_star")
        if mode is Mode.TWO_GROUP and self.zeta.domain != "signed":
            raise ParameterError("two-group shield needs an energy function on [-1, 1]")
        if mode in SINGLE_MODES and self.zeta.domain != "unit":
            raise ParameterError("single-group shield needs an energy function on [0, 1]")
        self.reset()

    @classmethod
    def known(cls, zeta: EnergyFunction) -> "ShieldEngine":
        return cls(Mode.KNOWN, zeta)

    @classmethod
    def drift(cls, zeta: EnergyFunction) -> "ShieldEngine":
        return cls(Mode.DRIFT, zeta)

    @classmethod
    def two_group(cls, zeta: EnergyFunction) -> "ShieldEngine":
        return cls(Mode.TWO_GROUP, zeta)

    @classmethod
    def adaptive(cls, shape: Polynomial | Exponential, mu_star: float) -> "ShieldEngine":
        """Recalibrates the pivot of ``shape`` to the smoothed raw acceptance rate each step."""
        return cls(Mode.ADAPTIVE, shape, mu_star=mu_star)

    @classmethod
    def naive(cls, target: FairnessTarget) -> "ShieldEngine":
        return cls(Mode.NAIVE, target=target)

    @classmethod
    def idle(cls, two_group: bool = False) -> "ShieldEngine":
        if two_group:
            return cls(Mode.TWO_GROUP, Idle("signed"))
        return cls(Mode.IDLE, Idle())

    def fresh(self) -> "ShieldEngine":
        return ShieldEngine(self.mode, self.zeta, target=self.target, mu_star=self.mu_star)

    def reset(self) -> None:
        self.state = TwoGroupState() if self.mode is Mode.TWO_GROUP else RunningMeanState()
        self.interventions = 0
        self.raw_ones = 0
        self.raw_seen = 0

    @property
    def two_group_mode(self) -> bool:
        return self.mode is Mode.TWO_GROUP

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def cost(self) -> float:
        return self.interventions / self.t if self.t else 0.0

    @property
    def p_hat(self) -> float:
        """Laplace-smoothed raw acceptance rate; 0.5 before any data."""
        return (1.0 + self.raw_ones) / (2.0 + self.raw_seen)

    @property
    def value(self) -> float | None:
        return self.state.value if self.two_group_mode else self.state.mean

    def current_zeta(self) -> EnergyFunction:
        if self.mode is Mode.ADAPTIVE:
            return self.zeta.with_pivot(calibrated_pivot(self.zeta, self.p_hat, self.mu_star))
        return self.zeta

    def _record(self, x: int, y: int, z: int, group: str | None) -> StepRecord:
        if y:
            self.interventions += 1
        return StepRecord(self.t, group, x, y, z, self.value, self.cost)

    def _energy_rule(self, zeta: EnergyFunction, x: int, rand: float) -> int:
        # no intervention before the first decision: the first acceptance probability is p
        if self.state.t == 0:
            return 0
        mu = self.state.mean
        k = zeta.pivot
        e = zeta.eval(mu)
        if k is None or mu <= k:
            return int(x == 0 and rand < e)
        return int(x == 1 and rand < e)

    def step_single(self, x: int, rand: float) -> StepRecord:
        if self.mode not in (Mode.KNOWN, Mode.DRIFT, Mode.IDLE):
            raise ParameterError(f"step_single needs known, drift or idle mode, engine is {self.mode.value}")
        x = _bit(x, "step_single")
        y = self._energy_rule(self.zeta, x, rand)
        z = x ^ y
        self.state = update_mean(self.state, z)
        return self._record(x, y, z, None)

    def step_adaptive(self, x: int, rand: float) -> StepRecord:
        if self.mode is not Mode.ADAPTIVE:
            raise ParameterError("step_adaptive needs adaptive mode")
        x = _bit(x, "step_adaptive")
        self.raw_ones += x
        self.raw_seen += 1
        y = self._energy_rule(self.current_zeta(), x, rand)
        z = x ^ y
        self.state = update_mean(self.state, z)
        return self._record(x, y, z, None)

    def step_naive(self, x: int) -> StepRecord:
        if self.mode is not Mode.NAIVE:
            raise ParameterError("step_naive needs naive mode")
        x = _bit(x, "step_naive")
        lo, hi = self.target.lower, self.target.upper
        t1 = self.state.t + 1
        c = self.state.count_ones
        y = 0
        if t1 >= self.target.burn_in:
            keep = (c + x) / t1
            flip = (c + 1 - x) / t1
            if keep < lo or keep > hi:
                if lo <= flip <= hi:
                    y = 1
                else:
                    dk = lo - keep if keep < lo else keep - hi
                    df = lo - flip if flip < lo else flip - hi
                    y = int(df < dk)
        z = x ^ y
        self.state = update_mean(self.state, z)
        return self._record(x, y, z, None)

    def step_two_group(self, g: str, x: int, rand: float) -> StepRecord:
        if self.mode is not Mode.TWO_GROUP:
            raise ParameterError("step_two_group needs two-group mode")
        if g not in ("A", "B"):
            raise ValueError(f"group must be 'A' or 'B', got {g!r}")
        x = _bit(x, "step_two_group")
        y = 0
        mv = self.state.value
        # idle until both groups have been seen
        if mv is not None:
            k = self.zeta.pivot
            below = k is None or mv <= k
            favored = (1 if g == "A" else 0) if below else (0 if g == "A" else 1)
            if x != favored and rand < self.zeta.eval(mv):
                y = 1
        z = x ^ y
        self.state = update_two_group(self.state, g, z)
        return self._record(x, y, z, g)

    def step(self, item, rand: float) -> StepRecord:
        """Dispatch on mode; ``item`` is a bit, or a (group, bit) pair in two-group mode."""
        if self.mode is Mode.TWO_GROUP:
            g, x = item
            return self.step_two_group(g, x, rand)
        if self.mode is Mode.ADAPTIVE:
            return self.step_adaptive(item, rand)
        if self.mode is Mode.NAIVE:
            return self.step_naive(item)
        return self.step_single(item, rand)

    def kernel_args(self) -> tuple:
        """(mode code, energy code, params, pivot, aux) for the batched kernels."""
        code, prm = self.zeta.kernel_spec()
        k = self.zeta.pivot
        pivot = float(self.zeta.bounds[1] if k is None else k)
        if self.mode is Mode.NAIVE:
            aux = np.array([self.target.lower, self.target.upper, float(self.target.burn_in)])
            return kernels.MODE_NAIVE, code, prm, pivot, aux
        if self.mode is Mode.ADAPTIVE:
            lo, hi = self.zeta.bounds
            aux = np.array([lo, hi, float(self.mu_star)])
            return kernels.MODE_ADAPTIVE, code, prm, pivot, aux
        return kernels.MODE_ENERGY, code, prm, pivot, np.zeros(3)

    def config_json(self) -> dict:
        out = {"mode": self.mode.value}
        if self.mode is Mode.NAIVE:
            out["target"] = self.target.to_json()
        elif self.mode is Mode.ADAPTIVE:
            out["shape"] = self.zeta.to_json()
            out["mu_star"] = self.mu_star
        elif self.mode is not Mode.IDLE:
            out["energy"] = self.zeta.to_json()
        return out


def uniform_draws(seed, n: int) -> np.ndarray:
    """The per-step uniforms used by ``run_stream`` for a seed or SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss)).random(n)


def _parse_item(engine: ShieldEngine, item, index: int):
    if engine.two_group_mode:
        try:
            g, x = item
        except (TypeError, ValueError):
            raise ValueError(f"input {index}: expected a (group, bit) pair, got {item!r}") from None
        if g not in ("A", "B"):
            raise ValueError(f"input {index}: group must be 'A' or 'B', got {g!r}")
        return (g, _bit(x, f"input {index}"))
    return _bit(item, f"input {index}")


def run_stream(engine: ShieldEngine, xs, seed) -> list[StepRecord]:
    """Feed ``xs`` through ``engine`` with uniforms drawn from ``seed``."""
    items = [_parse_item(engine, item, i) for i, item in enumerate(xs)]
    rands = uniform_draws(seed, len(items))
    return [engine.step(item, float(r)) for item, r in zip(items, rands)]
