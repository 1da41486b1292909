import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piecewise_market.market import EventLaw, MarketModel, decompose_returns, simulate_paths
from piecewise_market.numeraire import ensemble_numeraire, structural_residual
from piecewise_market.portfolio import (
    AdmissibilityError, PreconditionError, classify_wealth, deflated_ratio_representation,
    relative_wealth_discrepancy, portfolio_from_strategy, relative_wealth, strategy_from_portfolio,
    wealth_of_portfolio, wealth_of_shares, wealth_of_strategy,
)
from piecewise_market.ustate import Predictable, TimeGrid, UPath


@pytest.fixture(scope="module")
def ensemble():
    m = MarketModel([1.0, 1.0], [0.1, 0.05, 0.08], np.diag([0.04, 0.01, 0.02]),
                    events=EventLaw(scheduled=[(0.5, "entry")]))
    ens = simulate_paths(m, TimeGrid.uniform(1.0, 32), 200, 5)
    return m, ens


def test_null_portfolio_is_money_market():
    dR = np.random.default_rng(0).normal(0, 0.1, (3, 5, 2))
    assert np.array_equal(wealth_of_portfolio(np.zeros_like(dR), dR).wealth, np.ones((3, 6)))


def test_full_investment_doubles():
    res = wealth_of_portfolio(np.ones((1, 1, 1)), np.ones((1, 1, 1)))
    assert res.wealth.tolist() == [[1.0, 2.0]]


def test_nonpositive_factor_is_reported():
    res = wealth_of_portfolio(np.full((1, 3, 1), 2.0), np.array([[[0.1], [-0.6], [0.1]]]))
    assert res.first_nonpositive.tolist() == [1] and not res.positive[0]


def test_strategy_wealth_examples():
    g = TimeGrid.uniform(3.0, 3)
    S = UPath.from_vectors(g, [[1, 2], [2, 3], [7], [4]], post={1: [5.0]})
    zero = Predictable.from_vectors(g, [0, 0], [[0, 0], [0], [0]])
    X, cls = wealth_of_strategy(2.0, zero, S)
    assert np.all(X == 2.0) and cls == "strict"
    theta = Predictable.from_vectors(g, [0, 0], [[1, 1], [2], [2]])
    X, _ = wealth_of_strategy(1.0, theta, S)
    assert X[-1] == 1.0
    S1 = UPath.from_vectors(g, [[1.0], [1.5], [0.7], [2.0]])
    hold = Predictable.from_vectors(g, [0.0], [[1.0]] * 3)
    X, _ = wealth_of_strategy(0.5, hold, S1)
    assert np.allclose(X, 0.5 + S1.values[:, 0] - 1.0)
    assert classify_wealth(X) == "strict"
    assert classify_wealth([1.0, 0.0]) == "admissible"
    assert classify_wealth([1.0, -0.1]) == "inadmissible"


def test_strategy_from_portfolio_first_step():
    left = np.ones((1, 2, 2))
    w = np.full((1, 2, 2), 0.5)
    X = wealth_of_portfolio(w, np.zeros((1, 2, 2))).wealth
    sh = strategy_from_portfolio(w, X, left)
    assert sh[0, 0].tolist() == [0.5, 0.5]
    assert not strategy_from_portfolio(np.zeros_like(w), X, left).any()


def test_round_trips_on_simulated_ensemble(ensemble):
    m, ens = ensemble
    rng = np.random.default_rng(1)
    dR = ens.returns()
    live = ens.step_live()
    w = np.where(live, rng.uniform(-0.5, 1.0, live.shape), 0.0)
    X = wealth_of_portfolio(w, dR).wealth
    sh = strategy_from_portfolio(w, X, ens.step_left())
    X2 = wealth_of_shares(1.0, sh, ens.step_left(), ens.step_right())
    assert np.abs(X2 - X).max() <= 1e-10
    back = portfolio_from_strategy(1.0, sh, ens.step_left(), ens.step_right())
    assert np.abs(np.where(live, back - w, 0)).max() <= 1e-10


def test_full_investment_hold_gives_unit_weight():
    left = np.array([[[1.0], [2.0], [3.0]]])
    right = np.array([[[2.0], [3.0], [0.5]]])
    sh = np.ones((1, 3, 1))
    pi = portfolio_from_strategy(1.0, sh, left, right)
    assert np.allclose(pi, 1.0)
    with pytest.raises(AdmissibilityError):
        portfolio_from_strategy(0.4, sh, left, right)


def test_relative_wealth_examples(ensemble):
    _, ens = ensemble
    dR = ens.returns()
    w = np.where(ens.step_live(), 0.3, 0.0)
    X = wealth_of_portfolio(w, dR).wealth
    assert np.all(relative_wealth(X, X) == 1.0)
    assert np.array_equal(relative_wealth(X, np.ones_like(X)), X)
    with pytest.raises(AdmissibilityError):
        relative_wealth(X, np.zeros_like(X))


def test_relative_wealth_discrepancy_zero_for_identical():
    dR = np.random.default_rng(2).normal(0, 0.05, (4, 10, 2))
    w = np.full_like(dR, 0.5)
    assert np.abs(relative_wealth_discrepancy(w, w, dR)).max() <= 1e-14


def test_deflated_ratio_replicating_rho(ensemble):
    m, ens = ensemble
    rho, _ = ensemble_numeraire(m, ens)
    dR = ens.returns()
    dec = decompose_returns(m, ens, "model", dR)
    X_rho = wealth_of_portfolio(rho, dR).wealth
    sh = strategy_from_portfolio(rho, X_rho, ens.step_left())
    res = deflated_ratio_representation(1.0, sh, rho, ens.step_left(), ens.step_right(),
                                        dec.dM, variant="mult")
    assert np.abs(res.eta).max() <= 1e-12
    assert res.residual.max() <= 1e-12


def test_deflated_ratio_zero_vol():
    g = TimeGrid.uniform(1.0, 8)
    m = MarketModel([1.0], [0.0], [[0.0]])
    ens = simulate_paths(m, g, 3, 0)
    dec = decompose_returns(m, ens)
    rho = np.zeros((3, 8, 1))
    res = deflated_ratio_representation(2.0, np.full((3, 8, 1), 0.7), rho, ens.step_left(),
                                        ens.step_right(), dec.dM)
    assert np.all(res.ratio == 2.0) and res.residual.max() <= 1e-12


def test_deflated_ratio_checks_precondition(ensemble):
    m, ens = ensemble
    rho, rates = ensemble_numeraire(m, ens)
    bad = structural_residual(rates, rho + 0.1)
    dec = decompose_returns(m, ens)
    with pytest.raises(PreconditionError):
        deflated_ratio_representation(1.0, np.zeros_like(rho), rho, ens.step_left(),
                                      ens.step_right(), dec.dM, structural=bad)


@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=20), st.floats(-1.5, 1.5))
def test_mult_and_exp_agree_to_second_order(rs, w):
    dR = np.array(rs)[None, :, None]
    W = np.full_like(dR, w)
    y = w * np.array(rs)
    if np.any(1 + y <= 0):
        return
    m = wealth_of_portfolio(W, dR, "mult").wealth[0, -1]
    e = wealth_of_portfolio(W, dR, "exp").wealth[0, -1]
    # log(1+y) - (y - y^2/2) = y^3/3 - ... per step
    bound = np.sum(np.abs(y) ** 3 / (3 * (1 - np.minimum(np.abs(y), 0.99)) ** 3))
    assert abs(np.log(m) - np.log(e)) <= bound + 1e-12
