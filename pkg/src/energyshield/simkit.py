"""Seeded Monte Carlo ensembles of shielded streams.

Replication i draws its raw decisions from the child seed (i, 0) of the
master seed and its intervention uniforms from (i, 1). Every engine fed
the same environment and seed therefore sees the same raw streams, and
results do not depend on how replications are scheduled.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParameterError
from .fairness import FairnessTarget
from .shield import ShieldEngine

DEFAULT_MAX_SAMPLES = 20_000_000
_CHUNK_ELEMENTS = 2_000_000


# environments


@dataclass(frozen=True)
class SingleGroup:
    p: float
    two_group = False

    def probabilities(self, times: np.ndarray) -> np.ndarray | float:
        return self.p

    def to_json(self) -> dict:
        return {"kind": "single", "p": self.p}


@dataclass(frozen=True)
class UnknownP(SingleGroup):
    """Same generator as SingleGroup; the name records that the shield is not told p."""

    def to_json(self) -> dict:
        return {"kind": "unknown_p", "p": self.p}


@dataclass(frozen=True)
class Sinusoid:
    base: float = 0.65
    amplitude: float = 0.1
    period: float = 2000.0

    def __call__(self, times: np.ndarray) -> np.ndarray:
        return np.clip(self.base + self.amplitude * np.sin(2.0 * np.pi * times / self.period), 0.0, 1.0)


@dataclass(frozen=True)
class DynamicP:
    schedule: Sinusoid
    two_group = False

    def probabilities(self, times: np.ndarray) -> np.ndarray:
        return self.schedule(times)

    def to_json(self) -> dict:
        s = self.schedule
        return {"kind": "sinusoid", "base": s.base, "amplitude": s.amplitude, "period": s.period}


@dataclass(frozen=True)
class TwoGroup:
    r_a: float
    p_a: float
    p_b: float
    two_group = True

    def to_json(self) -> dict:
        return {"kind": "two_group", "r_a": self.r_a, "p_a": self.p_a, "p_b": self.p_b}


def draw_env(env, rng: np.random.Generator, t0: int, c: int):
    """Raw decisions for steps t0+1 .. t0+c; returns (groups or None, bits) as int8."""
    if env.two_group:
        # one (group, decision) pair per step keeps the stream independent of chunking
        pair = rng.random((c, 2))
        g = pair[:, 0] < env.r_a
        x = pair[:, 1] < np.where(g, env.p_a, env.p_b)
        return g.astype(np.int8), x.astype(np.int8)
    times = np.arange(t0 + 1, t0 + c + 1, dtype=np.float64)
    x = rng.random(c) < env.probabilities(times)
    return None, x.astype(np.int8)


def replication_rngs(seed: int, i: int) -> tuple[np.random.Generator, np.random.Generator]:
    env = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i, 0))))
    shield = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i, 1))))
    return env, shield


# ensembles


@dataclass
class ExperimentConfig:
    env: object
    engine: ShieldEngine
    horizon: int
    replications: int
    seed: int
    target: FairnessTarget
    record_every: int = 1
    quantiles: tuple[float, float] = (0.025, 0.975)
    max_samples: int = DEFAULT_MAX_SAMPLES
    threads: int = 1
    name: str = "engine"

    def __post_init__(self):
        if self.replications < 1 or self.horizon < 1:
            raise ParameterError("need at least one replication and one step")
        if self.record_every < 1:
            raise ParameterError("record_every must be positive")
        if self.env.two_group != self.engine.two_group_mode:
            raise ParameterError("environment and engine disagree on the number of groups")
        if self.target.domain != ("signed" if self.env.two_group else "unit"):
            raise ParameterError("target domain does not match the environment")


@dataclass
class EnsembleSummary:
    name: str
    seed: int
    times: np.ndarray
    q_lo: np.ndarray
    mean: np.ndarray
    q_hi: np.ndarray
    cum_violations_mean: np.ndarray
    cum_violations_sd: np.ndarray
    cost_mean: np.ndarray
    final_value: np.ndarray
    interventions: np.ndarray
    violations: np.ndarray
    any_violation: np.ndarray
    quantile_method: str = "exact"
    quantile_levels: tuple[float, float] = (0.025, 0.975)
    values: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.final_value.size)

    @property
    def p_hat(self) -> float:
        return float(self.any_violation.mean())

    @property
    def e_hat(self) -> float:
        return float(self.violations.mean())

    @property
    def p_se(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.n)

    @property
    def e_se(self) -> float:
        return float(self.violations.std(ddof=1) / math.sqrt(self.n)) if self.n > 1 else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q025", "mean", "q975", "cum_violations_mean", "cum_violations_sd", "cost_mean"])
            for row in zip(self.times, self.q_lo, self.mean, self.q_hi, self.cum_violations_mean,
                           self.cum_violations_sd, self.cost_mean):
                w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "replications": self.n,
            "horizon": int(self.times[-1]),
            "quantile_method": self.quantile_method,
            "quantile_levels": list(self.quantile_levels),
            "p_hat": self.p_hat,
            "p_se": self.p_se,
            "e_hat": self.e_hat,
            "e_se": self.e_se,
            "final_mean": _nanmean(self.final_value),
            "mean_interventions": float(self.interventions.mean()),
            "mean_final_cost": float(self.cost_mean[-1]),
        }


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{float(v):.12g}"


def _nanmean(a: np.ndarray) -> float | None:
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else None


def _nanquantile(values: np.ndarray, levels) -> np.ndarray:
    # all-NaN columns (two-group steps before both groups appear) yield NaN
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanquantile(values, list(levels), axis=0)


def record_times(horizon: int, every: int) -> np.ndarray:
    times = np.arange(every, horizon + 1, every)
    if times.size == 0 or times[-1] != horizon:
        times = np.append(times, horizon)
    return times


@dataclass
class _Block:
    values: np.ndarray  # (b, G) fairness at record times
    cum_viol: np.ndarray  # (b, G)
    cost: np.ndarray  # (b, G)
    final_value: np.ndarray
    interventions: np.ndarray
    violations: np.ndarray
    any_violation: np.ndarray


def _simulate_block(cfg: ExperimentConfig, start: int, stop: int, times: np.ndarray) -> _Block:
    b = stop - start
    T = cfg.horizon
    G = times.size
    chunk = max(1, min(T, _CHUNK_ELEMENTS // b))
    rngs = [replication_rngs(cfg.seed, i) for i in range(start, stop)]
    mode, code, prm, pivot, aux = cfg.engine.kernel_args()
    two = cfg.env.two_group
    tw = max(cfg.target.burn_in, 1)
    lo, hi = cfg.target.lower, cfg.target.upper

    values = np.full((b, G), np.nan)
    cum_viol = np.zeros((b, G), dtype=np.int64)
    cost = np.zeros((b, G))
    ones = np.zeros(b, dtype=np.int64)
    raw_ones = np.zeros(b, dtype=np.int64)
    counts = np.zeros((b, 4), dtype=np.int64)
    n_viol = np.zeros(b, dtype=np.int64)
    n_int = np.zeros(b, dtype=np.int64)
    any_viol = np.zeros(b, dtype=bool)
    last_value = np.full(b, np.nan)

    for t0 in range(0, T, chunk):
        c = min(chunk, T - t0)
        x = np.empty((b, c), dtype=np.int8)
        g = np.empty((b, c), dtype=np.int8) if two else None
        u = np.empty((b, c))
        for k, (env_rng, sh_rng) in enumerate(rngs):
            gk, xk = draw_env(cfg.env, env_rng, t0, c)
            x[k] = xk
            if two:
                g[k] = gk
            u[k] = sh_rng.random(c)
        step_times = np.arange(t0 + 1, t0 + c + 1)
        if two:
            before = counts.copy()
            z, y = kernels.run_two_group(code, prm, pivot, g, x, u, counts)
            a = g.astype(np.int64)
            zz = z.astype(np.int64)
            na = before[:, [0]] + np.cumsum(a, axis=1)
            sa = before[:, [1]] + np.cumsum(a * zz, axis=1)
            nb = before[:, [2]] + np.cumsum(1 - a, axis=1)
            sb = before[:, [3]] + np.cumsum((1 - a) * zz, axis=1)
            defined = (na > 0) & (nb > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                mv = np.where(defined, sa / np.maximum(na, 1) - sb / np.maximum(nb, 1), np.nan)
        else:
            before = ones.copy()
            z, y = kernels.run_single(mode, code, prm, pivot, aux, x, u, t0, ones, raw_ones)
            mv = (before[:, None] + np.cumsum(z, axis=1, dtype=np.int64)) / step_times[None, :]
            defined = np.ones_like(mv, dtype=bool)
        viol = defined & ((mv < lo) | (mv > hi)) & (step_times >= tw)[None, :]
        cv = n_viol[:, None] + np.cumsum(viol, axis=1, dtype=np.int64)
        ci = n_int[:, None] + np.cumsum(y, axis=1, dtype=np.int64)
        sel = (times > t0) & (times <= t0 + c)
        if sel.any():
            cols = times[sel] - t0 - 1
            values[:, sel] = mv[:, cols]
            cum_viol[:, sel] = cv[:, cols]
            cost[:, sel] = ci[:, cols] / times[sel][None, :]
        any_viol |= viol.any(axis=1)
        n_viol = cv[:, -1].copy()
        n_int = ci[:, -1].copy()
        last_value = mv[:, -1].copy()

    return _Block(values, cum_viol, cost, last_value, n_int, n_viol, any_viol)


def _blocks(n: int, G: int, max_samples: int, threads: int) -> list[tuple[int, int]]:
    size = n
    if n * G > max_samples:
        size = max(1, max_samples // max(G, 1))
    size = max(1, min(size, math.ceil(n / max(threads, 1))))
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def run_ensemble(cfg: ExperimentConfig) -> EnsembleSummary:
    """Simulate ``cfg.replications`` independent streams and summarize them.

    Quantiles are exact when all n x G recorded values fit within
    ``max_samples``. Otherwise replications are processed in batches and
    the reported quantiles are batch-size-weighted averages of per-batch
    quantiles (``quantile_method == "batched"``). Means, violation
    statistics and costs are exact either way.
    """
    times = record_times(cfg.horizon, cfg.record_every)
    G = times.size
    n = cfg.replications
    exact = n * G <= cfg.max_samples
    spans = _blocks(n, G, cfg.max_samples, cfg.threads)
    qlo, qhi = cfg.quantiles

    sum_v = np.zeros(G)
    cnt_v = np.zeros(G)
    sum_c = np.zeros(G)
    sum_cv = np.zeros(G)
    sum_cv2 = np.zeros(G)
    q_acc = np.zeros((2, G))
    q_w = np.zeros(G)
    stored = []
    finals, ints, viols, anys = [], [], [], []

    def run(span):
        return _simulate_block(cfg, span[0], span[1], times)

    if cfg.threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, spans))
    else:
        results = None

    for idx, span in enumerate(spans):
        blk = results[idx] if results is not None else run(span)
        ok = ~np.isnan(blk.values)
        sum_v += np.where(ok, blk.values, 0.0).sum(axis=0)
        cnt_v += ok.sum(axis=0)
        sum_c += blk.cost.sum(axis=0)
        cv = blk.cum_viol.astype(np.float64)
        sum_cv += cv.sum(axis=0)
        sum_cv2 += (cv * cv).sum(axis=0)
        if exact:
            stored.append(blk.values)
        else:
            w = ok.sum(axis=0)
            q = _nanquantile(blk.values, (qlo, qhi))
            q_acc += np.where(w > 0, q, 0.0) * w
            q_w += w
        finals.append(blk.final_value)
        ints.append(blk.interventions)
        viols.append(blk.violations)
        anys.append(blk.any_violation)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt_v > 0, sum_v / np.maximum(cnt_v, 1), np.nan)
        cv_mean = sum_cv / n
        cv_var = np.maximum(sum_cv2 / n - cv_mean**2, 0.0) * (n / (n - 1) if n > 1 else 0.0)
    values = None
    if exact:
        values = np.concatenate(stored, axis=0)
        q = _nanquantile(values, (qlo, qhi))
        q_lo, q_hi = q[0], q[1]
        method = "exact"
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            q_lo = np.where(q_w > 0, q_acc[0] / np.maximum(q_w, 1), np.nan)
            q_hi = np.where(q_w > 0, q_acc[1] / np.maximum(q_w, 1), np.nan)
        method = "batched"
    return EnsembleSummary(
        name=cfg.name,
        seed=cfg.seed,
        times=times,
        q_lo=q_lo,
        mean=mean,
        q_hi=q_hi,
        cum_violations_mean=cv_mean,
        cum_violations_sd=np.sqrt(cv_var),
        cost_mean=sum_c / n,
        final_value=np.concatenate(finals),
        interventions=np.concatenate(ints),
        violations=np.concatenate(viols),
        any_violation=np.concatenate(anys),
        quantile_method=method,
        quantile_levels=(qlo, qhi),
        values=values,
    )


def replication_stream(env, seed: int, i: int, horizon: int):
    """Raw inputs and uniforms that replication i of an ensemble sees, for single-stream replay."""
    env_rng, sh_rng = replication_rngs(seed, i)
    g, x = draw_env(env, env_rng, 0, horizon)
    u = sh_rng.random(horizon)
    if g is None:
        return [int(v) for v in x], u
    return [("A" if gi else "B", int(v)) for gi, v in zip(g, x)], u


def empirical_violations(trajectories, target: FairnessTarget) -> dict:
    """Fraction of runs with any violation and mean violation count over [tau, T].

    ``trajectories`` is an (n, T) array of fairness values with column j
    holding time j+1; NaN marks an undefined value, which never counts.
    """
    traj = np.asarray(trajectories, dtype=np.float64)
    if traj.ndim != 2:
        raise ValueError("trajectories must be a 2-D array (runs x time)")
    n, T = traj.shape
    tw = max(target.burn_in, 1)
    if T < tw:
        raise ValueError(f"horizon {T} is shorter than the burn-in {tw}")
    window = traj[:, tw - 1:]
    with np.errstate(invalid="ignore"):
        viol = (window < target.lower) | (window > target.upper)
    counts = viol.sum(axis=1)
    p_hat = float((counts > 0).mean())
    e_hat = float(counts.mean())
    return {
        "p_hat": p_hat,
        "e_hat": e_hat,
        "p_se": math.sqrt(p_hat * (1 - p_hat) / n),
        "e_se": float(counts.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
    }


@dataclass
class Comparison:
    rows: list[dict]
    summaries: dict[str, EnsembleSummary]

    def write_csv(self, path) -> None:
        cols = ["engine", "final_fairness", "p_hat", "e_hat", "total_interventions"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["engine"]] + [_fmt(r[c]) for c in cols[1:]])


def compare_engines(env, engines: dict[str, ShieldEngine], horizon: int, replications: int, seed: int,
                    target: FairnessTarget, **kwargs) -> Comparison:
    """Run each engine on the same raw streams and tabulate the outcome."""
    summaries = {}
    rows = []
    for name, engine in engines.items():
        cfg = ExperimentConfig(env, engine, horizon, replications, seed, target, name=name, **kwargs)
        s = run_ensemble(cfg)
        summaries[name] = s
        rows.append({
            "engine": name,
            "final_fairness": _nanmean(s.final_value),
            "p_hat": s.p_hat,
            "e_hat": s.e_hat,
            "total_interventions": float(s.interventions.mean()),
        })
    return Comparison(rows, summaries)


def summary_json(summary: EnsembleSummary, config: dict | None = None) -> str:
    out = summary.to_json()
    if config is not None:
        out["config"] = config
    return json.dumps(out, indent=2, sort_keys=True)


__all__ = [
    "SingleGroup", "UnknownP", "DynamicP", "Sinusoid", "TwoGroup", "ExperimentConfig", "EnsembleSummary",
    "run_ensemble", "empirical_violations", "compare_engines", "Comparison", "replication_stream",
    "record_times",
]
