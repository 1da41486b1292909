from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from piecewise_market.market import MarketModel, simulate_paths
from piecewise_market.numeraire import numeraire_dissection
from piecewise_market.openmarket import (
    censor_returns, censored_rates, is_top_m_portfolio, rank_max_min, rank_process, ranked_value,
    ranks_of, restrict_to_top_m, top_m_numeraire, turnover_stats,
)
from piecewise_market.ustate import TimeGrid


def argsort_ranks(v):
    # stable descending sort: equal values keep index order
    order = sorted(range(len(v)), key=lambda i: (-v[i], i))
    u = np.empty(len(v), int)
    u[order] = np.arange(1, len(v) + 1)
    return u


def test_ranked_value_examples():
    v = np.array([5.0, 4.0, 2.0, 1.0])
    for k in range(1, 5):
        assert ranked_value(v, k) == (v[k - 1], k - 1)
    with pytest.raises(ValueError):
        ranked_value(v, 0)


def test_ties_favor_lower_index():
    assert ranks_of([1.0, 1.0]).tolist() == [1, 2]
    assert ranks_of([1.0, 2.0, 2.0]).tolist() == [3, 1, 2]


@given(arrays(float, st.integers(1, 8), elements=st.integers(-3, 3).map(float)))
def test_max_min_formula_equals_sorting(v):
    for k in range(1, v.size + 1):
        assert rank_max_min(v, k) == ranked_value(v, k)[0]


@given(arrays(float, st.integers(1, 7), elements=st.floats(-10, 10)))
def test_ranks_are_a_permutation(v):
    u = ranks_of(v)
    assert sorted(u.tolist()) == list(range(1, v.size + 1))
    assert np.array_equal(u, argsort_ranks(v.tolist()))


def test_rank_process_matches_argsort():
    m = MarketModel([1.2, 1.0, 0.8], [0.06, 0.08, 0.1], np.diag([0.04, 0.05, 0.06]))
    ens = simulate_paths(m, TimeGrid.uniform(1.0, 16), 30, 0)
    u = rank_process(ens.step_left(), ens.step_dims())
    for p in range(30):
        for j in range(16):
            assert np.array_equal(u[p, j], argsort_ranks(ens.step_left()[p, j].tolist()))
    const = np.broadcast_to([3.0, 2.0, 1.0], (1, 4, 3))
    assert np.all(rank_process(const, np.full((1, 4), 3)) == [1, 2, 3])


def test_padding_ranks_below_everything():
    left = np.array([[[1.0, 2.0, np.nan]]])
    assert rank_process(left, np.array([[2]])).tolist() == [[[2, 1, 4]]]


def test_censor_returns_examples(rng):
    dR = rng.normal(size=(5, 4, 3))
    u = np.stack([rng.permutation(3) + 1 for _ in range(20)]).reshape(5, 4, 3)
    assert np.array_equal(censor_returns(dR, u, 3), dR)
    with pytest.raises(ValueError):
        censor_returns(dR, u, 0)
    top = np.broadcast_to([1, 2], (1, 4, 2))
    out = censor_returns(rng.normal(size=(1, 4, 2)), top, 1)
    assert not out[..., 1].any()
    m2 = censor_returns(dR, u, 2)
    assert np.array_equal(m2, np.where(u <= 2, dR, 0))


def test_censored_rates_examples():
    a = np.array([0.1, 0.05])
    c = np.array([[0.04, 0.01], [0.01, 0.02]])
    full = censored_rates(a, c, np.array([1, 2]), 2)
    assert np.array_equal(full.alpha, a) and np.array_equal(full.c, c)
    one = censored_rates(a, c, np.array([1, 2]), 1)
    assert one.alpha.tolist() == [0.1, 0.0]
    assert one.c.tolist() == [[0.04, 0.0], [0.0, 0.0]]


def test_top_m_numeraire_examples():
    a = np.array([0.1, 0.05])
    c = np.diag([0.04, 0.01])
    full = top_m_numeraire(censored_rates(a, c, np.array([1, 2]), 2))
    assert np.allclose(full.rho, numeraire_dissection(a, c).rho)
    one = top_m_numeraire(censored_rates(a, c, np.array([1, 2]), 1))
    assert np.allclose(one.rho, [2.5, 0.0]) and np.isclose(one.growth, 0.125)
    # asset 2 on top: censoring restricts to it even though asset 1 grows faster
    other = top_m_numeraire(censored_rates(a, c, np.array([2, 1]), 1))
    assert np.allclose(other.rho, [0.0, 5.0])
    assert np.isclose(other.growth, 0.5 * 0.05 ** 2 / 0.01)
    grid = np.arange(-20, 20, 1e-3)
    assert np.isclose(other.growth, np.max(0.05 * grid - 0.005 * grid ** 2), atol=1e-8)


def test_is_top_m_portfolio_examples():
    u = np.array([[1, 2, 3]])
    ok, bad = is_top_m_portfolio(np.array([[1 / 3] * 3]), u, 2)
    assert not ok and bad == (0, 2)
    assert is_top_m_portfolio(restrict_to_top_m(np.array([[1 / 3] * 3]), u, 2), u, 2)[0]
    cr = censored_rates(np.array([0.1, 0.2, 0.3]), np.diag([0.1, 0.2, 0.3]), u, 2)
    assert is_top_m_portfolio(top_m_numeraire(cr).rho, u, 2)[0]


def test_turnover_counts():
    u = np.array([[[1, 2], [1, 2], [2, 1], [2, 1]]])
    stats = turnover_stats(u, 1)
    assert stats["mean_rank_changes"] == 1 and stats["mean_top_m_changes"] == 1
