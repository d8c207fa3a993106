import csv
import json
import math

import numpy as np
import pytest

from energyshield.analysis import CharacteristicModel
from energyshield.energy import Exponential, Polynomial, calibrate
from energyshield.errors import ParameterError
from energyshield.exactdp import ChainSpec, dp_value
from energyshield.fairness import FairnessTarget
from energyshield.shield import ShieldEngine, run_stream
from energyshield.simkit import (
    DynamicP,
    ExperimentConfig,
    Sinusoid,
    SingleGroup,
    TwoGroup,
    compare_engines,
    empirical_violations,
    replication_stream,
    run_ensemble,
    summary_json,
)

S = (0.4, 0.6)
TARGET = FairnessTarget.make(100, S, (0.49, 0.51))


def cfg(engine, p=0.5, T=500, n=50, seed=1, target=TARGET, **kw):
    return ExperimentConfig(SingleGroup(p), engine, T, n, seed, target, **kw)


def test_single_replication_matches_run_stream():
    engine = ShieldEngine.known(calibrate(Polynomial(0.5, 4, 2), 0.65, 0.5))
    s = run_ensemble(cfg(engine, p=0.65, T=300, n=1, seed=4))
    xs, u = replication_stream(SingleGroup(0.65), 4, 0, 300)
    eng = engine.fresh()
    recs = [eng.step(x, float(r)) for x, r in zip(xs, u)]
    assert np.array_equal(s.values[0], np.array([r.m for r in recs]))
    assert s.interventions[0] == sum(r.y for r in recs)
    assert s.cost_mean[-1] == pytest.approx(recs[-1].nu)


def test_two_group_replication_matches_engine():
    env = TwoGroup(0.8, 0.7, 0.4)
    zeta = Polynomial(0.0, 0.5, 2, domain="signed")
    target = FairnessTarget.make(10, (-0.2, 0.2), (-0.05, 0.05), "signed")
    s = run_ensemble(ExperimentConfig(env, ShieldEngine.two_group(zeta), 200, 1, 9, target))
    items, u = replication_stream(env, 9, 0, 200)
    eng = ShieldEngine.two_group(zeta)
    recs = [eng.step(item, float(r)) for item, r in zip(items, u)]
    expect = np.array([np.nan if r.m is None else r.m for r in recs])
    assert np.allclose(s.values[0], expect, equal_nan=True, rtol=0, atol=1e-15)
    assert s.interventions[0] == sum(r.y for r in recs)


def test_reproducible_and_seed_sensitive():
    engine = ShieldEngine.known(Exponential(0.5, 1, 128))
    a = run_ensemble(cfg(engine, seed=3))
    b = run_ensemble(cfg(engine, seed=3))
    c = run_ensemble(cfg(engine, seed=4))
    for k in ("q_lo", "mean", "q_hi", "cum_violations_mean", "cost_mean", "final_value"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert not np.array_equal(a.final_value, c.final_value)
    assert summary_json(a) == summary_json(b)


def test_threads_do_not_change_results():
    engine = ShieldEngine.known(Exponential(0.5, 1, 128))
    a = run_ensemble(cfg(engine, n=40, seed=2))
    b = run_ensemble(cfg(engine, n=40, seed=2, threads=3))
    assert np.array_equal(a.q_lo, b.q_lo) and np.array_equal(a.final_value, b.final_value)


def test_idle_envelope_binomial():
    T, n = 10_000, 1000
    s = run_ensemble(cfg(ShieldEngine.idle(), p=0.5, T=T, n=n, seed=0, record_every=100))
    assert s.q_lo[-1] <= 0.5 <= s.q_hi[-1]
    # binomial oracle: 95% band of a mean of t fair coins has half-width 1.96 * 0.5 / sqrt(t)
    for t in (1000, 10_000):
        k = int(np.searchsorted(s.times, t))
        half = 0.5 * (s.q_hi[k] - s.q_lo[k])
        assert half == pytest.approx(1.96 * 0.5 / math.sqrt(t), rel=0.15)
    w = s.q_hi - s.q_lo
    assert w[9] > w[99]
    assert s.interventions.sum() == 0


def test_calibrated_envelope_converges():
    engine = ShieldEngine.known(calibrate(Polynomial(0.5, 4, 2), 0.65, 0.5))
    s = run_ensemble(cfg(engine, p=0.65, T=10_000, n=300, seed=5, record_every=1000))
    assert 0.45 <= s.q_lo[-1] <= s.q_hi[-1] <= 0.55


def test_envelope_ordered():
    s = run_ensemble(cfg(ShieldEngine.known(Polynomial(0.5, 4, 2)), p=0.3, n=80, seed=8))
    assert np.all(s.q_lo <= s.mean + 1e-12) and np.all(s.mean <= s.q_hi + 1e-12)
    assert 0.0 <= s.p_hat <= 1.0


def test_batched_quantiles_reported():
    engine = ShieldEngine.idle()
    exact = run_ensemble(cfg(engine, T=400, n=200, seed=6))
    batched = run_ensemble(cfg(engine, T=400, n=200, seed=6, max_samples=20_000))
    assert exact.quantile_method == "exact" and batched.quantile_method == "batched"
    assert np.allclose(exact.mean, batched.mean, rtol=0, atol=1e-12)
    assert np.allclose(exact.cum_violations_mean, batched.cum_violations_mean, rtol=0, atol=1e-12)
    assert np.allclose(exact.q_lo[100:], batched.q_lo[100:], atol=0.03)


def test_empirical_violations_examples():
    inside = np.full((5, 10), 0.5)
    assert empirical_violations(inside, FairnessTarget.make(1, S, 0.5))["p_hat"] == 0.0
    traj = np.array([[0.5, 0.7, 0.5], [0.3, 0.3, np.nan]])
    out = empirical_violations(traj, FairnessTarget.make(2, S, 0.5))
    assert out["p_hat"] == 1.0 and out["e_hat"] == 1.0
    with pytest.raises(ValueError):
        empirical_violations(traj, FairnessTarget.make(5, S, 0.5))


def test_empirical_idle_two_steps():
    s = run_ensemble(cfg(ShieldEngine.idle(), p=0.5, T=2, n=20_000, seed=0, target=FairnessTarget.make(1, S, 0.5)))
    out = empirical_violations(s.values, FairnessTarget.make(1, S, 0.5))
    assert out["p_hat"] == 1.0
    assert abs(out["e_hat"] - 1.5) <= 3 * out["e_se"]
    assert out["p_hat"] == s.p_hat and out["e_hat"] == s.e_hat


def test_summary_matches_stored_trajectories():
    s = run_ensemble(cfg(ShieldEngine.known(Polynomial(0.5, 4, 2)), p=0.3, T=300, n=100, seed=12))
    out = empirical_violations(s.values, TARGET)
    assert out["p_hat"] == s.p_hat and out["e_hat"] == s.e_hat
    assert s.p_hat <= s.e_hat or s.e_hat == 0


def test_dp_agreement_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(30):
        p = float(rng.uniform(0.2, 0.8))
        lo = float(rng.uniform(0.3, 0.45))
        hi = float(rng.uniform(0.55, 0.7))
        tau = int(rng.integers(5, 60))
        T = int(rng.integers(tau, 501))
        zeta = Polynomial(float(rng.uniform(0.4, 0.6)), float(rng.uniform(0.5, 2.5)), 2)
        target = FairnessTarget.make(tau, (lo, hi), (0.5, 0.5))
        exact = dp_value(ChainSpec(CharacteristicModel(zeta, p), target, T))
        s = run_ensemble(cfg(ShieldEngine.known(zeta), p=p, T=T, n=10_000, seed=int(rng.integers(1 << 30)),
                             target=target, record_every=T))
        assert abs(s.p_hat - exact.p_value) <= 3 * max(s.p_se, 1e-3)
        assert abs(s.e_hat - exact.e_value) <= 3 * max(s.e_se, 1e-3)


def test_compare_idle_naive():
    naive_s = FairnessTarget.make(100, S, (0.49, 0.51))
    cmp = compare_engines(SingleGroup(0.3), {"idle": ShieldEngine.idle(), "naive": ShieldEngine.naive(naive_s)},
                          1000, 50, 3, TARGET)
    rows = {r["engine"]: r for r in cmp.rows}
    assert rows["idle"]["total_interventions"] == 0
    assert rows["naive"]["total_interventions"] > 0
    assert rows["naive"]["p_hat"] < rows["idle"]["p_hat"]


def test_compare_identical_engines_identical_rows(tmp_path):
    zeta = Polynomial(0.5, 4, 2)
    cmp = compare_engines(SingleGroup(0.3), {"a": ShieldEngine.known(zeta), "b": ShieldEngine.known(zeta)},
                          400, 30, 5, TARGET)
    ra, rb = cmp.rows
    assert {k: v for k, v in ra.items() if k != "engine"} == {k: v for k, v in rb.items() if k != "engine"}
    cmp.write_csv(tmp_path / "cmp.csv")
    lines = (tmp_path / "cmp.csv").read_text().splitlines()
    assert lines[0] == "engine,final_fairness,p_hat,e_hat,total_interventions"
    assert lines[1].split(",")[1:] == lines[2].split(",")[1:]


def test_csv_and_json(tmp_path):
    s = run_ensemble(cfg(ShieldEngine.idle(), T=50, n=10, record_every=20))
    s.write_csv(tmp_path / "e.csv")
    with open(tmp_path / "e.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "q025", "mean", "q975", "cum_violations_mean", "cum_violations_sd", "cost_mean"]
    assert [r[0] for r in rows[1:]] == ["20", "40", "50"]
    js = json.loads(summary_json(s, {"k": 1}))
    assert js["replications"] == 10 and js["horizon"] == 50 and js["config"] == {"k": 1}


def test_sinusoid_schedule():
    sched = Sinusoid()
    t = np.array([0, 500, 1000, 1500])
    assert np.allclose(sched(t), 0.65 + 0.1 * np.sin(2 * np.pi * t / 2000))
    env = DynamicP(Sinusoid(0.5, 0.2, 100))
    assert np.allclose(env.probabilities(np.array([25])), 0.7)


def test_config_validation():
    with pytest.raises(ParameterError):
        cfg(ShieldEngine.idle(), n=0)
    with pytest.raises(ParameterError):
        ExperimentConfig(TwoGroup(0.5, 0.5, 0.5), ShieldEngine.idle(), 10, 1, 0, TARGET)
    with pytest.raises(ParameterError):
        ExperimentConfig(SingleGroup(0.5), ShieldEngine.idle(), 10, 1, 0,
                         FairnessTarget.make(1, (-0.1, 0.1), 0, "signed"))


def test_run_stream_replay_of_replication_is_exact():
    env = SingleGroup(0.4)
    xs, u = replication_stream(env, 1, 3, 100)
    eng = ShieldEngine.idle()
    a = [eng.step(x, float(r)).m for x, r in zip(xs, u)]
    b = [r.m for r in run_stream(ShieldEngine.idle(), xs, seed=0)]
    assert a == b
