import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piecewise_market.market import (
    DomainError, EventLaw, MarketModel, ModelError, covariation, decompose_returns,
    integrability_report, local_rates, psd_factor, return_process, simulate_paths,
)
from piecewise_market.ustate import TimeGrid, UPath


def gbm2(events=None, **kw):
    return MarketModel([1.0, 1.0], [0.1, 0.05], np.diag([0.04, 0.01]),
                       events=events or EventLaw(), **kw)


def test_psd_factor_rejects_negative_eigenvalue():
    with pytest.raises(ModelError):
        psd_factor([[1.0, 2.0], [2.0, 1.0]])
    L = psd_factor([[1.0, 1.0], [1.0, 1.0]])
    assert np.allclose(L @ L.T, [[1, 1], [1, 1]])


def test_zero_vol_zero_drift_is_constant():
    m = MarketModel([1.0, 2.0], [0.0, 0.0], np.zeros((2, 2)))
    ens = simulate_paths(m, TimeGrid.uniform(1.0, 16), 5, 0)
    assert np.all(ens.prices == np.array([1.0, 2.0]))
    assert all(ens.resets(p).indices == (0,) for p in range(5))


def test_simulation_is_deterministic():
    law = EventLaw(p_entry=0.05, p_exit=0.05, p_split=0.02, p_merge=0.02)
    m = MarketModel([1.0, 1.0, 1.0], [0.1] * 8, 0.04 * np.eye(8), events=law)
    g = TimeGrid.uniform(1.0, 32)
    a = simulate_paths(m, g, 50, 7)
    b = simulate_paths(m, g, 50, 7, chunk=13)
    for name in ("prices", "post", "dims", "dims_post", "ids", "reset"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True)
    c = simulate_paths(m, g, 50, 8)
    assert not np.array_equal(a.prices, c.prices, equal_nan=True)


def test_scheduled_entry_changes_dimension():
    m = MarketModel([1.0, 1.0], [0.1, 0.05, 0.08], np.diag([0.04, 0.01, 0.02]),
                    events=EventLaw(scheduled=[(0.5, "entry")]))
    g = TimeGrid.uniform(1.0, 8)
    ens = simulate_paths(m, g, 10, 0)
    assert np.all(ens.dims[:, :5] == 2) and np.all(ens.dims[:, 5:] == 3)
    assert np.all(ens.reset[:, 4]) and np.all(ens.dims_post[:, 4] == 3)
    assert np.all(ens.post[:, 4, 2] == 1.0)
    assert ens.resets(0).indices == (0, 4)


def test_random_events_keep_mass_and_structure():
    law = EventLaw(p_split=0.1, p_merge=0.1)
    m = MarketModel([1.0, 2.0, 3.0], np.zeros(10), np.zeros((10, 10)), events=law)
    ens = simulate_paths(m, TimeGrid.uniform(1.0, 30), 40, 3)
    # splits and mergers conserve total capitalization without diffusion
    tot = np.nansum(ens.prices, axis=2)
    assert np.allclose(tot, 6.0)
    for p in range(ens.n_paths):
        ens.path(p)  # validates dimension bookkeeping


def test_returns_match_hand_formula(rng):
    m = MarketModel([1.0, 1.0], [0.1, 0.05, 0.08], np.diag([0.04, 0.01, 0.02]),
                    events=EventLaw(scheduled=[(0.5, "entry")]))
    ens = simulate_paths(m, TimeGrid.uniform(1.0, 16), 20, 1)
    dR = ens.returns()
    for p in range(3):
        X = ens.path(p)
        for j in range(16):
            left = X.right_limit(j)
            right = X.value(j + 1)
            assert np.allclose(dR[p, j, : left.size], (right - left) / left, rtol=0, atol=1e-14)


def test_doubling_price_has_unit_return():
    g = TimeGrid.uniform(1.0, 1)
    S = UPath.from_vectors(g, [[1.0], [2.0]])
    R = return_process(S)
    assert R.value(1)[0] == 1.0
    const = UPath.from_vectors(TimeGrid.uniform(1.0, 3), [[2.0, 3.0]] * 4)
    assert not np.any(return_process(const).values)


def test_return_process_restarts_at_reset():
    g = TimeGrid.uniform(2.0, 2)
    S = UPath.from_vectors(g, [[1.0], [2.0], [3.0, 1.5]], post={1: [2.0, 1.0]})
    R = return_process(S)
    assert R.value(1)[0] == 1.0
    assert np.array_equal(R.right_limit(1), [0.0, 0.0])
    assert np.allclose(R.value(2), [0.5, 0.5])


def test_nonpositive_price_raises_domain_error():
    m = MarketModel([1.0], [0.0], [[1.0]], kind="constant")
    ens = simulate_paths(m, TimeGrid.uniform(10.0, 200), 50, 0)
    with pytest.raises(DomainError) as err:
        ens.returns()
    assert err.value.path is not None and err.value.component == 0


def test_decomposition_special_cases():
    g = TimeGrid.uniform(1.0, 8)
    m0 = MarketModel([1.0, 1.0], [0.0, 0.0], np.diag([0.04, 0.01]))
    ens = simulate_paths(m0, g, 5, 0)
    dec = decompose_returns(m0, ens)
    assert not dec.dA.any() and np.array_equal(dec.dM, ens.returns())
    md = MarketModel([1.0, 1.0], [0.1, 0.2], np.zeros((2, 2)), scheme="euler")
    ens = simulate_paths(md, g, 5, 0)
    dec = decompose_returns(md, ens)
    assert np.abs(dec.dM).max() < 1e-15 and not dec.dC.any()


def test_realized_covariation_matches_model_rate():
    m = gbm2(scheme="euler")
    g = TimeGrid.uniform(1.0, 64)
    ens = simulate_paths(m, g, 10_000, 11)
    real = decompose_returns(m, ens, "realized").dC.sum(axis=1)
    model = decompose_returns(m, ens, "model").dC.sum(axis=1)
    for i, j in [(0, 0), (1, 1), (0, 1)]:
        x = real[:, i, j] - model[:, i, j]
        se = x.std(ddof=1) / np.sqrt(x.size)
        assert abs(x.mean()) <= 3 * se


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=20), st.floats(-5, 5))
def test_covariation_properties(p, q0):
    P = np.array(p)
    assert np.all(np.diff(covariation(P, P)) >= 0)
    assert not covariation(P, np.full_like(P, q0)).any()
    Q = P[::-1].copy()
    assert np.allclose(covariation(P, Q), covariation(Q, P))


def test_local_rates_examples():
    dt = 0.01
    r = local_rates(np.zeros((1, 1)), np.zeros((1, 1, 1)), dt, "paper")
    assert r.alpha[0, 0] == 0 and r.c[0, 0, 0] == 0 and r.dO[0] == 0
    r = local_rates(np.array([[0.1 * dt]]), np.array([[[0.04 * dt]]]), dt, "paper")
    assert np.isclose(r.dO[0], 0.14 * dt, rtol=1e-14)
    assert np.isclose(r.alpha[0, 0], 5 / 7, rtol=1e-14)
    assert np.isclose(r.c[0, 0, 0], 2 / 7, rtol=1e-14)


def test_integrability_examples():
    a = np.array([0.1, 0.05])
    c = np.diag([0.04, 0.01])
    assert integrability_report(np.zeros(2), a, c, 1.0).value == 0
    rep = integrability_report(np.ones(2), a, c, np.full(4, 0.25))
    assert rep.finite and np.isclose(rep.value, 0.20, rtol=1e-14)
    rep2 = integrability_report(2 * np.ones(2), a, c, np.full(4, 0.25))
    assert np.isclose(rep2.value, 2 * 0.15 + 4 * 0.05, rtol=1e-14)
    bad = integrability_report(np.ones(2), np.array([np.inf, 0]), c, 1.0)
    assert not bad.finite


def test_model_validation():
    with pytest.raises(ModelError):
        MarketModel([1.0], [0.1, 0.1], np.eye(3))
    with pytest.raises(ModelError):
        MarketModel([-1.0], [0.1], [[0.1]])
    with pytest.raises(ModelError):
        EventLaw(scheduled=[(1.0, "entry")]).schedule(TimeGrid.uniform(1.0, 4))


def test_model_id_is_stable():
    assert gbm2().model_id() == gbm2().model_id()
    assert gbm2().model_id() != gbm2(scheme="euler").model_id()
