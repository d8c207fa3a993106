"""Acceptance criteria at their stated scale and tolerance.

Each test records one PASS/FAIL line through the ``criterion`` fixture;
the lines are repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from energyshield.analysis import (
    CharacteristicModel,
    TwoGroupModel,
    drift_containment,
    find_fixpoint,
    single_group_params,
    tail_bound,
)
from energyshield.energy import Exponential, Idle, Monotonic, Naive, Polynomial, calibrate, eval_monotonic
from energyshield.exactdp import ChainSpec, dp_value, dp_value_two_group, enumerate_bruteforce
from energyshield.fairness import FairnessTarget, burn_in_tau_S
from energyshield.shield import ShieldEngine
from energyshield.simkit import (
    DynamicP,
    ExperimentConfig,
    Sinusoid,
    SingleGroup,
    TwoGroup,
    UnknownP,
    compare_engines,
    run_ensemble,
)
from energyshield.synthesis import SynthesisInstance, choose_T_DP, condition, synthesize

MU_STAR = 0.5
UNIT_TARGET = FairnessTarget.make(100, (0.4, 0.6), (0.49, 0.51))
CHECK_TIMES = (1_000, 10_000, 100_000)


@pytest.fixture(scope="module")
def calibrated_runs():
    """1000 runs to T=1e5 per bias, fairness recorded every 1000 steps."""
    out = {}
    for p in (0.3, 0.5, 0.65):
        zeta = calibrate(Polynomial(0.5, 4, 2), p, MU_STAR)
        cfg = ExperimentConfig(SingleGroup(p), ShieldEngine.known(zeta), 100_000, 1000, 101, UNIT_TARGET,
                               record_every=1000)
        out[p] = run_ensemble(cfg)
    return out


def at(summary, t):
    return int(np.searchsorted(summary.times, t))


def test_criterion_1_convergence(calibrated_runs, criterion):
    parts, ok = [], True
    for p, s in calibrated_runs.items():
        err = [float(np.mean(np.abs(s.values[:, at(s, t)] - MU_STAR))) for t in CHECK_TIMES]
        frac = float(np.mean(np.abs(s.values[:, at(s, 10_000)] - MU_STAR) <= 0.02))
        good = frac >= 0.95 and err[0] > err[1] > err[2]
        ok &= good
        parts.append(f"p={p} within0.02@1e4={frac:.3f} mean|M-0.5|={err[0]:.4f}>{err[1]:.4f}>{err[2]:.4f}")
    assert criterion("1 convergence", ok, "; ".join(parts))


def test_criterion_2_limit_cost(calibrated_runs, criterion):
    parts, ok = [], True
    for p, s in calibrated_runs.items():
        nu = float(s.cost_mean[at(s, 10_000)])
        expect = abs(p - MU_STAR)
        good = abs(nu - expect) <= 0.02
        ok &= good
        parts.append(f"p={p} nu@1e4={nu:.4f} expect {expect:.2f}+-0.02")
    assert criterion("2 limit cost", ok, "; ".join(parts))


def random_unit_energy(rng):
    kind = rng.integers(5)
    if kind == 0:
        kappa, beta = float(rng.uniform(0.3, 0.7)), float(rng.uniform(1.5, 3))
        return Polynomial(kappa, float(rng.uniform(0.1, 1)) / max(kappa, 1 - kappa) ** beta, beta)
    if kind == 1:
        return Exponential(float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.2, 1)), float(rng.uniform(1, 128)))
    if kind == 2:
        return Monotonic(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.1, 0.9)), (0.3, 0.7), (0.45, 0.55))
    if kind == 3:
        return Naive(0.4, 0.6)
    return Idle()


def test_criterion_3_dp_exactness(criterion):
    rng = np.random.default_rng(3)
    worst_single = 0.0
    for _ in range(200):
        zeta = random_unit_energy(rng)
        p = float(rng.uniform(0.05, 0.95))
        lo = float(rng.uniform(0.1, 0.5))
        target = FairnessTarget.make(int(rng.integers(0, 8)), (lo, lo + float(rng.uniform(0.05, 0.4))),
                                     lo + 0.025)
        T = int(rng.integers(1, 17))
        model = CharacteristicModel(zeta, p)
        res = dp_value(ChainSpec(model, target, T))
        worst_single = max(worst_single, abs(res.p_value - enumerate_bruteforce(model, target, T, "P")),
                           abs(res.e_value - enumerate_bruteforce(model, target, T, "E")))
    worst_two = 0.0
    for _ in range(50):
        kappa = float(rng.uniform(-0.3, 0.3))
        zeta = Polynomial(kappa, float(rng.uniform(0.1, 1)) / (1 + abs(kappa)) ** 2, 2, domain="signed")
        model = TwoGroupModel(zeta, float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.1, 0.9)),
                              float(rng.uniform(0.1, 0.9)))
        lo = float(rng.uniform(-0.6, -0.05))
        target = FairnessTarget.make(int(rng.integers(0, 5)), (lo, float(rng.uniform(0.05, 0.6))), 0.0, "signed")
        T = int(rng.integers(1, 11))
        measure = "P" if rng.random() < 0.5 else "E"
        res = dp_value_two_group(model, target, T, measure)
        worst_two = max(worst_two, abs(res.value - enumerate_bruteforce(model, target, T, measure)))
    ok = worst_single <= 1e-12 and worst_two <= 1e-12
    assert criterion("3 DP exactness", ok,
                     f"200 single-group max diff {worst_single:.2e}; 50 two-group max diff {worst_two:.2e}")


def calibrated_instance(rng):
    mu = float(rng.uniform(0.4, 0.6))
    p = float(rng.uniform(0.2, 0.8))
    shape = Polynomial(0.5, float(rng.uniform(2, 4)), 2) if rng.random() < 0.5 else Exponential(0.5, 1, 64)
    zeta = calibrate(shape, p, mu)
    model = CharacteristicModel(zeta, p)
    fix = find_fixpoint(model)
    running = (fix - float(rng.uniform(0.25, 0.35)), fix + float(rng.uniform(0.25, 0.35)))
    running = (max(running[0], 0.02), min(running[1], 0.98))
    target = FairnessTarget.make(1, running, fix)
    tau = burn_in_tau_S(target, fix)
    return zeta, p, model, target.with_burn_in(tau), fix


def test_criterion_4_bound_soundness(criterion):
    rng = np.random.default_rng(4)
    T, n = 2000, 2000
    worst_gap, checked = -math.inf, 0
    instances = [calibrated_instance(rng) for _ in range(30)]
    for k, (zeta, p, model, target, fix) in enumerate(instances):
        params = single_group_params(target, fix)
        s = run_ensemble(ExperimentConfig(SingleGroup(p), ShieldEngine.known(zeta), T, n, 400 + k, target))
        for t in np.linspace(target.burn_in, T, 20).astype(int):
            col = s.values[:, t - 1]
            p_hat = float(np.mean((col < target.lower) | (col > target.upper)))
            sigma = math.sqrt(p_hat * (1 - p_hat) / n)
            worst_gap = max(worst_gap, p_hat - tail_bound(int(t), params) - 3 * sigma)
            checked += 1
    window_gap = -math.inf
    for zeta, p, model, target, fix in instances[:20]:
        params = single_group_params(target, fix)
        start = int(rng.integers(target.burn_in, 1500))
        stop = start + int(rng.integers(0, 300))
        e = dp_value(ChainSpec(model, target.with_burn_in(start), stop), measures="E").e_value
        cor = sum(tail_bound(t, params) for t in range(start, stop + 1))
        window_gap = max(window_gap, e - cor)
    ok = worst_gap <= 0 and window_gap <= 0
    assert criterion("4 bound soundness", ok,
                     f"{checked} (instance,time) checks, max P-hat - bound - 3sd = {worst_gap:.3g}; "
                     f"20 windows, max E - bound = {window_gap:.3g}")


def test_criterion_5_monotonicity(criterion):
    p, running, limit = 0.3, (0.4, 0.6), (0.49, 0.51)
    tau = max(burn_in_tau_S(FairnessTarget.make(1, running, limit), m) for m in limit)
    target = FairnessTarget.make(tau, running, limit)
    rs = np.linspace(0.05, 0.95, 10)
    worst = -math.inf
    for h in (10, 50, 100, 200):
        vals = [dp_value(ChainSpec(CharacteristicModel(Monotonic(float(r), p, running, limit), p), target, tau + h))
                for r in rs]
        for a, b in zip(vals, vals[1:]):
            worst = max(worst, b.p_value - a.p_value, b.e_value - a.e_value)
    xs = np.linspace(0, 1, 200)
    grid = np.array([eval_monotonic(float(r), p, running, limit, xs) for r in np.linspace(0.01, 0.99, 50)])
    worst_eval = float(np.max(grid[:-1] - grid[1:]))
    ok = worst <= 1e-12 and worst_eval <= 1e-12
    assert criterion("5 monotonicity", ok,
                     f"tau={tau}, max DP increase along r = {worst:.2e}; max eval decrease along r = {worst_eval:.2e}")


# synthesis

SYN_RUNNING, SYN_LIMIT = (0.3, 0.7), (0.45, 0.55)


def syn_instance(tau, eps, p):
    return SynthesisInstance("P", FairnessTarget.make(tau, SYN_RUNNING, SYN_LIMIT), 0.1, eps, p=p)


def witness(inst, out):
    """Condition one probe step less steep, or None when the result is the family's least steep end."""
    r = out.index - 0.05
    if r < inst.index_range[0]:
        return None
    return condition(inst.member(r), out.t_dp, inst)


@pytest.mark.parametrize("eps", [0.05, 0.01])
def test_criterion_6a_synthesis_found(criterion, eps):
    parts, ok = [], True
    for p in (0.65, 0.9):
        inst = syn_instance(100, eps, p)
        out = synthesize(inst)
        w = witness(inst, out)
        good = out.found and out.condition <= inst.delta + eps and (w is None or w > inst.delta - eps)
        ok &= good
        wtxt = "n/a (least steep member already valid)" if w is None else f"{w:.4f}"
        parts.append(f"p={p} r={out.index:.4g} d={out.condition:.4f} T_DP={out.t_dp} witness={wtxt}")
    assert criterion(f"6a synthesis tau=100 eps={eps}", ok, "; ".join(parts))


@pytest.mark.parametrize("eps", [0.05, 0.01])
def test_criterion_6b_synthesis_minimality(criterion, eps):
    inst = syn_instance(20, eps, 0.65)
    out = synthesize(inst)
    w = witness(inst, out)
    ok = out.found and out.condition <= inst.delta + eps and w is not None and w > inst.delta - eps
    assert criterion(f"6b synthesis tau=20 eps={eps}", ok,
                     f"r={out.index:.4g} d={out.condition:.4f} d(r-0.05)={w if w is None else round(w, 4)} "
                     f"> {inst.delta - eps:.2f}, {out.iterations} bisection steps")


def test_criterion_6c_synthesis_fail(criterion):
    # burn-in 1 counts the first decision, which always leaves S
    inst = syn_instance(1, 0.05, 0.65)
    out = synthesize(inst)
    ok = out.status == "fail" and out.condition > inst.delta
    assert criterion("6c synthesis fail", ok, f"status={out.status} d(steepest)={out.condition:.4f}")


@pytest.mark.xfail(strict=True, reason="T_DP grows by a constant when epsilon halves, not by a factor of two")
def test_criterion_6d_t_dp_doubles(criterion):
    eps_grid = (0.1, 0.05, 0.025, 0.0125)
    t = [choose_T_DP(syn_instance(100, e, 0.65)) for e in eps_grid]
    ratios = [b / a for a, b in zip(t, t[1:])]
    ok = all(r >= 2 for r in ratios)
    criterion("6d T_DP doubling", ok, f"T_DP over eps {eps_grid} = {t}, ratios {[round(r, 3) for r in ratios]}")
    assert ok


def test_criterion_6e_runtime_superlinear(criterion):
    eps_grid = (0.1, 1e-2, 1e-4)
    sizes, secs = [], []
    for e in eps_grid:
        inst = syn_instance(100, e, 0.65)
        t_dp = choose_T_DP(inst)
        zeta = inst.member(0.5)
        best = math.inf
        for _ in range(3):
            start = time.perf_counter()
            condition(zeta, t_dp, inst)
            best = min(best, time.perf_counter() - start)
        sizes.append(t_dp)
        secs.append(best)
    slope = math.log(secs[-1] / secs[0]) / math.log(sizes[-1] / sizes[0])
    ok = all(b > a for a, b in zip(secs, secs[1:])) and slope >= 1.5
    assert criterion("6e runtime superlinear", ok,
                     f"T_DP {sizes}, condition seconds {[round(s, 3) for s in secs]}, log-log slope {slope:.2f}")


def test_criterion_7_two_group(criterion):
    zeta = calibrate(Polynomial(0.0, 4, 2, domain="signed", allow_clipping=True), 0.3, 0.5)
    target = FairnessTarget.make(100, (0.3, 0.7), (0.45, 0.55), "signed")
    s = run_ensemble(ExperimentConfig(TwoGroup(0.8, 0.7, 0.4), ShieldEngine.two_group(zeta), 20_000, 1000, 7,
                                      target, record_every=1000))
    frac = float(np.mean(np.abs(s.final_value - 0.5) <= 0.05))
    ok = abs(zeta.eval(0.5) - 2 / 7) < 1e-12 and frac >= 0.95
    assert criterion("7 two-group", ok, f"zeta(0.5)={zeta.eval(0.5):.6f}, within 0.5+-0.05 at T=2e4: {frac:.3f}")


def test_criterion_8_adaptive(criterion):
    engine = ShieldEngine.adaptive(Polynomial(0.5, 4, 2), MU_STAR)
    s = run_ensemble(ExperimentConfig(UnknownP(0.65), engine, 100_000, 1000, 8, UNIT_TARGET, record_every=1000))
    err = [float(np.mean(np.abs(s.values[:, at(s, t)] - MU_STAR))) for t in CHECK_TIMES]
    frac = float(np.mean(np.abs(s.final_value - MU_STAR) <= 0.03))
    ok = frac >= 0.95 and err[0] > err[1] > err[2]
    assert criterion("8 adaptive", ok,
                     f"within 0.03 at T=1e5: {frac:.3f}; mean|M-0.5| {err[0]:.4f}>{err[1]:.4f}>{err[2]:.4f}")


def test_criterion_9_drift(criterion):
    zeta = Polynomial(0.5, 4, 2)
    band = drift_containment(zeta)
    env = DynamicP(Sinusoid(0.65, 0.1, 2000))
    s = run_ensemble(ExperimentConfig(env, ShieldEngine.drift(zeta), 100_000, 100, 9, UNIT_TARGET))
    window = s.values[:, 999:]
    outside = (window < 0.23) | (window > 0.77)
    frac = float(outside.mean())
    worst_run = float(outside.mean(axis=1).max())
    ok = frac <= 0.01
    assert criterion("9 drift containment", ok,
                     f"analytic band [{band.lower:.3f}, {band.upper:.3f}]; outside [0.23,0.77] over t in [1e3,1e5]: "
                     f"{frac:.2e} pooled, {worst_run:.2e} worst run")


def test_criterion_10_baselines(criterion):
    p = 0.3
    target = UNIT_TARGET
    engines = {
        "energy": ShieldEngine.known(Monotonic(0.1, p, target.running, target.limit)),
        "naive_S": ShieldEngine.naive(target),
        "naive_L": ShieldEngine.naive(FairnessTarget.make(100, target.limit, target.limit)),
        "idle": ShieldEngine.idle(),
    }
    cmp = compare_engines(SingleGroup(p), engines, 5000, 1000, 10, target)
    fin = {k: s.final_value for k, s in cmp.summaries.items()}
    closer = float(np.mean(np.abs(fin["energy"] - 0.5) < np.abs(fin["naive_S"] - 0.5)))
    ints = {k: float(s.interventions.mean()) for k, s in cmp.summaries.items()}
    ok = closer >= 0.9 and ints["idle"] == 0 < ints["energy"] < ints["naive_L"]
    assert criterion("10 baseline dominance", ok,
                     f"energy closer than naive(S) in {closer:.3f} of pairs; mean interventions idle={ints['idle']:.0f} "
                     f"energy={ints['energy']:.0f} naive(L)={ints['naive_L']:.0f}")
