import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piecewise_market.market import MarketModel
from piecewise_market.mcstats import (
    DataError, bonferroni_z, empirical_order, mean_with_se, refinement_study, supermartingale_test,
)


def test_mean_with_se_examples():
    est = mean_with_se(np.full(10, 3.0))
    assert est.mean == 3.0 and est.se == 0.0
    est = mean_with_se([0.0, 2.0])
    assert est.mean == 1.0 and est.se == 1.0
    with pytest.raises(DataError):
        mean_with_se([1.0, np.nan])


def test_bernoulli_mean_within_three_se():
    x = np.random.default_rng(0).integers(0, 2, 10_000)
    est = mean_with_se(x)
    assert abs(est.mean - 0.5) <= 3 * est.se
    assert np.isclose(est.se, 0.005, rtol=0.01)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_se_is_scale_equivariant(xs):
    a = mean_with_se(xs)
    b = mean_with_se(2 * np.array(xs))
    assert np.isclose(b.se, 2 * a.se, rtol=1e-9, atol=1e-12)


def test_bonferroni_grows_with_tests():
    assert bonferroni_z(1) == pytest.approx(3.0)
    assert bonferroni_z(10) > bonferroni_z(2) > 3.0


def test_supermartingale_test_examples():
    ones = np.ones((100, 5))
    rep = supermartingale_test(ones, [0, 2, 4])
    assert rep.passed and rep.worst_margin == 0.0
    rising = np.tile(1 + 0.01 * np.arange(5), (100, 1))
    assert not supermartingale_test(rising, [0, 4]).passed
    rng = np.random.default_rng(1)
    walk = np.cumsum(rng.normal(0, 0.1, (4000, 5)), axis=1)
    assert supermartingale_test(walk - 0.01 * np.arange(5), [0, 2, 4]).passed


def test_supermartingale_conditional_buckets_detect_hidden_drift():
    # unconditionally flat, but high starting values keep rising
    rng = np.random.default_rng(2)
    s = rng.normal(size=20_000)
    t = s + 0.2 * np.sign(s) + rng.normal(0, 0.05, s.size)
    X = np.stack([s, t], axis=1)
    assert not supermartingale_test(X, [0, 1]).passed


def test_empirical_order():
    dts = [0.1, 0.05, 0.025]
    assert np.isclose(empirical_order(dts, [d ** 2 for d in dts]), 2.0)
    assert empirical_order(dts, [0, 0, 0]) == np.inf


def test_refinement_zero_model():
    m = MarketModel([1.0, 1.0], [0.0, 0.0], np.zeros((2, 2)))
    rep = refinement_study(m, 1.0, [8, 16, 32], 4, 0)
    assert not any(rep.row("wealth_gap").errors)
    assert rep.passed


def test_refinement_deterministic_linear_drift():
    m = MarketModel([1.0], [0.5], [[0.0]], kind="constant")
    rep = refinement_study(m, 1.0, [16, 32, 64, 128], 2, 0)
    gap = rep.row("wealth_gap")
    assert gap.applicable and gap.order >= 1.0
    assert not rep.row("relative_wealth").applicable


def test_refinement_rejects_random_events():
    from piecewise_market.market import EventLaw
    m = MarketModel([1.0], [0.1, 0.1], np.eye(2) * 0.04, events=EventLaw(p_entry=0.1))
    with pytest.raises(ValueError):
        refinement_study(m, 1.0, [8, 16], 4, 0)
