"""Exact finite-horizon violation measures by dynamic programming.

Single-group states are (t, c) with c ones among the first t decisions.
The first decision is accepted with probability p and later ones with
f(c / t). Violations are counted only for t >= max(burn_in, 1).
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .analysis import CharacteristicModel, TwoGroupModel
from .errors import ParameterError, ResourceLimitError
from .fairness import FairnessTarget

PROBABILITY = "P"
EXPECTATION = "E"
MEASURES = (PROBABILITY, EXPECTATION)

DEFAULT_STATE_BUDGET = 2_000_000_000
TABLE_STATE_BUDGET = 20_000_000
DEFAULT_EXACT_LIMIT = 150
DEFAULT_MC_RUNS = 100_000


@dataclass(frozen=True)
class ChainSpec:
    model: CharacteristicModel
    target: FairnessTarget
    horizon: int
    measure: str = PROBABILITY

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ParameterError(f"measure must be 'P' or 'E', got {self.measure!r}")
        if self.horizon < 0:
            raise ParameterError("horizon must be nonnegative")


@dataclass
class DPResult:
    value: float
    measure: str
    p_value: float
    e_value: float
    state_count: int
    seconds: float
    method: str = "exact"
    stderr: float = 0.0
    table: list | None = field(default=None, repr=False)

    def write_table(self, path) -> None:
        """CSV rows (t, c, V) for the selected measure, t from 1."""
        if self.table is None:
            raise ValueError("result was computed without a value table")
        col = 0 if self.measure == PROBABILITY else 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "c", "value"])
            for t, layer in enumerate(self.table, start=1):
                for c, v in enumerate(layer[col]):
                    w.writerow([t, c, f"{v:.12g}"])


def _state_count(T: int) -> int:
    return T * (T + 1) // 2 + T


def dp_value(spec: ChainSpec, table: bool = False, state_budget: int = DEFAULT_STATE_BUDGET,
             measures: str = "both") -> DPResult:
    """Exact violation measures over [max(tau, 1), T] for a single-group chain.

    Both measures are computed in one sweep (unless ``measures`` names one)
    so that P <= E can be checked on every call.
    """
    model, target, T = spec.model, spec.target, int(spec.horizon)
    states = _state_count(T)
    if states > state_budget:
        raise ResourceLimitError(f"DP over horizon {T} needs {states} states; budget is {state_budget}")
    if table and states > TABLE_STATE_BUDGET:
        raise ResourceLimitError(f"value table over horizon {T} exceeds {TABLE_STATE_BUDGET} states")
    mask = {"both": 3, PROBABILITY: 1, EXPECTATION: 2}[measures]
    code, prm = model.zeta.kernel_spec()
    pivot = model.zeta.pivot
    pivot = model.zeta.bounds[1] if pivot is None else pivot
    t0 = time.perf_counter()
    vp, ve, layers = kernels.dp_single(
        code, prm, float(pivot), float(model.p), target.lower, target.upper, target.burn_in, T, mask, table
    )
    seconds = time.perf_counter() - t0
    if mask == 3 and vp > ve + 1e-9:
        raise AssertionError(f"probability measure {vp} exceeds expectation {ve}")
    value = vp if spec.measure == PROBABILITY else ve
    return DPResult(float(value), spec.measure, float(vp), float(ve), states, seconds, table=layers)


# two groups


def _two_group_probs(model: TwoGroupModel, mv: np.ndarray, defined: np.ndarray):
    """Acceptance probabilities for an arriving A and B member at fairness values mv."""
    pa, pb = model.p_a, model.p_b
    z = model.zeta.eval(np.where(defined, mv, 0.0))
    z = np.where(defined, z, 0.0)
    k = model.zeta.pivot
    below = mv <= (model.zeta.bounds[1] if k is None else k)
    # group A is favoured to accept below the pivot, group B above it
    acc_a = np.where(below, pa + (1 - pa) * z, pa * (1 - z))
    acc_b = np.where(below, pb * (1 - z), pb + (1 - pb) * z)
    return acc_a, acc_b


def _cube_values(t: int):
    """Fairness values over the (n_a, s_a, s_b) cube at time t; NaN where undefined or unreachable."""
    na = np.arange(t + 1)[:, None, None]
    sa = np.arange(t + 1)[None, :, None]
    sb = np.arange(t + 1)[None, None, :]
    nb = t - na
    valid = (sa <= na) & (sb <= nb)
    defined = valid & (na > 0) & (nb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mv = sa / np.where(na > 0, na, 1) - sb / np.where(nb > 0, nb, 1)
    return np.broadcast_to(mv, (t + 1,) * 3), np.broadcast_to(defined, (t + 1,) * 3)


def _two_group_exact(model: TwoGroupModel, target: FairnessTarget, T: int):
    ra, rb = model.r_a, model.r_b
    tw = max(target.burn_in, 1)
    mass_p = np.ones((1, 1, 1))
    mass_e = np.ones((1, 1, 1))
    absorbed = 0.0
    expected = 0.0
    for t in range(T):
        mv, defined = _cube_values(t)
        acc_a, acc_b = _two_group_probs(model, mv, defined)
        nxt = []
        for mass in (mass_p, mass_e):
            new = np.zeros((t + 2,) * 3)
            # group A: n_a+1, s_a+z
            new[1:, 1:, :-1] += mass * (ra * acc_a)
            new[1:, :-1, :-1] += mass * (ra * (1 - acc_a))
            # group B: n_a unchanged, s_b+z
            new[:-1, :-1, 1:] += mass * (rb * acc_b)
            new[:-1, :-1, :-1] += mass * (rb * (1 - acc_b))
            nxt.append(new)
        mass_p, mass_e = nxt
        if t + 1 >= tw:
            mv, defined = _cube_values(t + 1)
            viol = defined & ((mv < target.lower) | (mv > target.upper))
            expected += float(mass_e[viol].sum())
            absorbed += float(mass_p[viol].sum())
            mass_p = np.where(viol, 0.0, mass_p)
    return absorbed, expected


def _two_group_monte_carlo(model: TwoGroupModel, target: FairnessTarget, T: int, runs: int, seed: int):
    code, prm = model.zeta.kernel_spec()
    k = model.zeta.pivot
    pivot = model.zeta.bounds[1] if k is None else k
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    tw = max(target.burn_in, 1)
    chunk = max(1, min(T, 2_000_000 // max(runs, 1)))
    counts = np.zeros((runs, 4), dtype=np.int64)
    any_viol = np.zeros(runs, dtype=bool)
    n_viol = np.zeros(runs, dtype=np.int64)
    for t0 in range(0, T, chunk):
        c = min(chunk, T - t0)
        g = (rng.random((runs, c)) < model.r_a).astype(np.int8)
        px = np.where(g == 1, model.p_a, model.p_b)
        x = (rng.random((runs, c)) < px).astype(np.int8)
        u = rng.random((runs, c))
        before = counts.copy()
        z, _ = kernels.run_two_group(code, prm, float(pivot), g, x, u, counts)
        a = g.astype(np.int64)
        na = before[:, [0]] + np.cumsum(a, axis=1)
        sa = before[:, [1]] + np.cumsum(a * z, axis=1)
        nb = before[:, [2]] + np.cumsum(1 - a, axis=1)
        sb = before[:, [3]] + np.cumsum((1 - a) * z, axis=1)
        defined = (na > 0) & (nb > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mv = sa / np.maximum(na, 1) - sb / np.maximum(nb, 1)
        times = t0 + 1 + np.arange(c)
        viol = defined & ((mv < target.lower) | (mv > target.upper)) & (times >= tw)[None, :]
        any_viol |= viol.any(axis=1)
        n_viol += viol.sum(axis=1)
    p_hat = float(any_viol.mean())
    e_hat = float(n_viol.mean())
    p_se = float(np.sqrt(p_hat * (1 - p_hat) / runs))
    e_se = float(n_viol.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return p_hat, e_hat, p_se, e_se


def dp_value_two_group(model: TwoGroupModel, target: FairnessTarget, T: int, measure: str = PROBABILITY,
                       exact_limit: int = DEFAULT_EXACT_LIMIT, mc_runs: int = DEFAULT_MC_RUNS,
                       seed: int = 0) -> DPResult:
    """Exact two-group measures over states (t, N_A, S_A, S_B) up to ``exact_limit``.

    Longer horizons fall back to a seeded Monte Carlo estimate whose
    standard error is reported in the result.
    """
    if measure not in MEASURES:
        raise ParameterError(f"measure must be 'P' or 'E', got {measure!r}")
    T = int(T)
    t0 = time.perf_counter()
    if T <= 0:
        return DPResult(0.0, measure, 0.0, 0.0, 0, 0.0)
    if T <= exact_limit:
        vp, ve = _two_group_exact(model, target, T)
        states = sum((t + 1) ** 3 for t in range(T + 1))
        if vp > ve + 1e-9:
            raise AssertionError(f"probability measure {vp} exceeds expectation {ve}")
        value = vp if measure == PROBABILITY else ve
        return DPResult(value, measure, vp, ve, states, time.perf_counter() - t0)
    p_hat, e_hat, p_se, e_se = _two_group_monte_carlo(model, target, T, mc_runs, seed)
    value, se = (p_hat, p_se) if measure == PROBABILITY else (e_hat, e_se)
    return DPResult(value, measure, p_hat, e_hat, mc_runs * T, time.perf_counter() - t0, "monte_carlo", se)


# brute-force oracle

SINGLE_ENUM_LIMIT = 20
TWO_GROUP_ENUM_LIMIT = 12
_PATH_CHUNK = 1 << 16


def enumerate_bruteforce(model, target: FairnessTarget, T: int, measure: str = PROBABILITY) -> float:
    """Sum path probabilities over every decision sequence of length T.

    Slow by design; serves as the test oracle for both DPs.
    """
    if measure not in MEASURES:
        raise ParameterError(f"measure must be 'P' or 'E', got {measure!r}")
    T = int(T)
    if T <= 0:
        return 0.0
    if model.two_group:
        if T > TWO_GROUP_ENUM_LIMIT:
            raise ResourceLimitError(f"two-group enumeration limited to T <= {TWO_GROUP_ENUM_LIMIT}")
        return _enum_two_group(model, target, T, measure)
    if T > SINGLE_ENUM_LIMIT:
        raise ResourceLimitError(f"single-group enumeration limited to T <= {SINGLE_ENUM_LIMIT}")
    return _enum_single(model, target, T, measure)


def _energy(zeta, mv):
    return zeta.eval(np.clip(mv, *zeta.bounds))


def _enum_single(model, target, T, measure):
    k = model.zeta.pivot
    pivot = np.inf if k is None else k
    tw = max(target.burn_in, 1)
    total = 0.0
    n_paths = 1 << T
    for start in range(0, n_paths, _PATH_CHUNK):
        idx = np.arange(start, min(n_paths, start + _PATH_CHUNK), dtype=np.int64)
        prob = np.ones(idx.size)
        ones = np.zeros(idx.size)
        hits = np.zeros(idx.size)
        for t in range(1, T + 1):
            z = (idx >> (t - 1)) & 1
            if t == 1:
                acc = np.full(idx.size, model.p)
            else:
                mu = ones / (t - 1)
                e = _energy(model.zeta, mu)
                acc = np.where(mu <= pivot, model.p + (1 - model.p) * e, model.p * (1 - e))
            prob *= np.where(z == 1, acc, 1 - acc)
            ones += z
            if t >= tw:
                m = ones / t
                hits += (m < target.lower) | (m > target.upper)
        score = (hits > 0) if measure == PROBABILITY else hits
        total += float(np.sum(prob * score))
    return total


def _enum_two_group(model, target, T, measure):
    k = model.zeta.pivot
    pivot = np.inf if k is None else k
    tw = max(target.burn_in, 1)
    total = 0.0
    n_paths = 1 << (2 * T)
    for start in range(0, n_paths, _PATH_CHUNK):
        idx = np.arange(start, min(n_paths, start + _PATH_CHUNK), dtype=np.int64)
        prob = np.ones(idx.size)
        na = np.zeros(idx.size)
        sa = np.zeros(idx.size)
        nb = np.zeros(idx.size)
        sb = np.zeros(idx.size)
        hits = np.zeros(idx.size)
        for t in range(1, T + 1):
            in_a = ((idx >> (2 * (t - 1))) & 1) == 1
            z = (idx >> (2 * (t - 1) + 1)) & 1
            defined = (na > 0) & (nb > 0)
            mv = np.where(defined, sa / np.maximum(na, 1) - sb / np.maximum(nb, 1), 0.0)
            e = np.where(defined, _energy(model.zeta, mv), 0.0)
            up = mv <= pivot
            # the shield pushes A towards acceptance and B towards rejection below the pivot
            acc_a = np.where(up, model.p_a + (1 - model.p_a) * e, model.p_a * (1 - e))
            acc_b = np.where(up, model.p_b * (1 - e), model.p_b + (1 - model.p_b) * e)
            acc = np.where(in_a, acc_a, acc_b)
            prob *= np.where(in_a, model.r_a, 1 - model.r_a) * np.where(z == 1, acc, 1 - acc)
            na += in_a
            sa += in_a * z
            nb += ~in_a
            sb += (~in_a) * z
            if t >= tw:
                ok = (na > 0) & (nb > 0)
                m = np.where(ok, sa / np.maximum(na, 1) - sb / np.maximum(nb, 1), 0.0)
                hits += ok & ((m < target.lower) | (m > target.upper))
        score = (hits > 0) if measure == PROBABILITY else hits
        total += float(np.sum(prob * score))
    return total
