import pytest
from hypothesis import given
from hypothesis import strategies as st

from energyshield.errors import BoundPreconditionError, ParameterError
from energyshield.fairness import (
    FairnessTarget,
    RunningMeanState,
    TwoGroupState,
    burn_in_tau_S,
    point_fair,
    update_mean,
    update_two_group,
)


def test_update_mean_examples():
    s = update_mean(RunningMeanState(), 1)
    assert (s.t, s.mean) == (1, 1.0)
    s = update_mean(RunningMeanState(99, 40), 1)
    assert (s.t, s.mean) == (100, 0.41)
    s = update_mean(RunningMeanState(1, 1), 0)
    assert (s.t, s.mean) == (2, 0.5)
    assert RunningMeanState().mean == 0.0


def test_update_mean_rejects_non_bits():
    with pytest.raises(ValueError):
        update_mean(RunningMeanState(), 2)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=2000))
def test_iterated_mean_matches_direct_average(bits):
    s = RunningMeanState()
    for b in bits:
        old = s.mean
        s = update_mean(s, b)
        # incremental form of the same update, to one ulp-scale tolerance
        assert s.mean == pytest.approx(old + (b - old) / s.t, abs=1e-12)
    assert s.mean == sum(bits) / len(bits)


def test_two_group_examples():
    s = update_two_group(TwoGroupState(), "A", 1)
    assert (s.n_a, s.s_a) == (1, 1)
    assert s.value is None and not s.defined
    s = update_two_group(TwoGroupState(2, 1, 1, 0), "B", 1)
    assert s.value == 0.0
    assert TwoGroupState(1, 1, 1, 1).value == 0


@given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 1)), max_size=1000))
def test_two_group_incremental_matches_recompute(seq):
    s = TwoGroupState()
    for g, z in seq:
        prev = s
        s = update_two_group(s, g, z)
        if prev.defined and s.defined:
            if g == "A":
                step = (z - prev.s_a / prev.n_a) / s.n_a
            else:
                step = -(z - prev.s_b / prev.n_b) / s.n_b
            assert s.value == pytest.approx(prev.value + step, abs=1e-12)
    na = sum(1 for g, _ in seq if g == "A")
    nb = len(seq) - na
    if na and nb:
        sa = sum(z for g, z in seq if g == "A")
        sb = sum(z for g, z in seq if g == "B")
        assert s.value == pytest.approx(sa / na - sb / nb, abs=1e-12)
    else:
        assert s.value is None


def test_two_group_rejects_bad_group():
    with pytest.raises(ValueError):
        update_two_group(TwoGroupState(), "C", 1)


def test_point_fair():
    t = FairnessTarget.make(0, (0.4, 0.6), 0.5)
    assert point_fair(0.5, t)
    assert not point_fair(0.39999, t)
    assert point_fair(0.4, t)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_limit_membership_implies_point_fair(a, b, c, d, v):
    s_lo, l_lo, l_hi, s_hi = sorted([a, b, c, d])
    t = FairnessTarget.make(0, (s_lo, s_hi), (l_lo, l_hi))
    if t.in_limit(v):
        assert point_fair(v, t)


def test_target_validation():
    with pytest.raises(ParameterError):
        FairnessTarget.make(0, (0.4, 0.6), (0.3, 0.5))
    with pytest.raises(ParameterError):
        FairnessTarget.make(0, (0.6, 0.4), 0.5)
    with pytest.raises(ParameterError):
        FairnessTarget.make(-1, (0.4, 0.6), 0.5)
    with pytest.raises(ParameterError):
        FairnessTarget.make(0, (-0.2, 0.2), 0.0)
    t = FairnessTarget.make(0, (-0.2, 0.2), 0.0, "signed")
    assert t.limit == (0.0, 0.0)


def test_burn_in_tau_S():
    assert burn_in_tau_S(FairnessTarget.make(0, (0.4, 0.6), 0.5), 0.5) == 40
    assert burn_in_tau_S(FairnessTarget.make(0, (0.3, 0.7), 0.5), 0.5) == 20
    assert burn_in_tau_S(FairnessTarget.make(0, (0.4, 0.6), 0.5), 0.588) == 334
    with pytest.raises(BoundPreconditionError, match="tail bounds inapplicable"):
        burn_in_tau_S(FairnessTarget.make(0, (0.4, 0.6), 0.5), 0.6)
    with pytest.raises(BoundPreconditionError):
        burn_in_tau_S(FairnessTarget.make(0, (0.4, 0.6), 0.5), 0.7)
