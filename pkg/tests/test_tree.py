import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from piecewise_market import tree as T
from piecewise_market.scenario import load_json


def one_step_tree(up, down=None, mid=None, p=None):
    kids = [x for x in (up, mid, down) if x is not None]
    p = p or [1.0 / len(kids)] * len(kids)
    nodes = [{"id": "r", "parent": None, "prices": [1.0]}]
    for i, (s, q) in enumerate(zip(kids, p)):
        nodes.append({"id": f"c{i}", "parent": "r", "prob": q, "prices": [s]})
    return T.EventTree.from_nodes(nodes)


def binomial2():
    # 1 -> {2, 0.5} -> {4, 1} / {1, 0.25}
    recs = [{"id": "r", "parent": None, "prices": [1.0]},
            {"id": "u", "parent": "r", "prob": 0.5, "prices": [2.0]},
            {"id": "d", "parent": "r", "prob": 0.5, "prices": [0.5]}]
    for par, s in (("u", 2.0), ("d", 0.5)):
        recs.append({"id": par + "u", "parent": par, "prob": 0.5, "prices": [2 * s]})
        recs.append({"id": par + "d", "parent": par, "prob": 0.5, "prices": [0.5 * s]})
    return T.EventTree.from_nodes(recs)


def lp_superhedge(tree, dK):
    # independent oracle: backward recursion with scipy's LP solver
    V = np.asarray(dK, float).copy()
    for k in reversed(range(len(tree))):
        kids = tree.nodes[k].children
        if not kids:
            continue
        _, G = tree.step(k)
        n = G.shape[1]
        res = linprog(np.r_[1.0, np.zeros(n)], A_ub=-np.c_[np.ones(len(kids)), G], b_ub=-V[kids],
                      bounds=[(None, None)] * (n + 1), method="highs")
        assert res.status == 0
        V[k] += res.fun
    return V


# ---------------------------------------------------------------- one-step sets


def test_binomial_unique_ratio():
    os_ = T.one_step_deflator_set(one_step_tree(2.0, 0.5), "r")
    assert os_.status == "singleton"
    assert np.allclose(os_.particular, [2 / 3, 4 / 3], atol=1e-12)


def test_trinomial_family():
    os_ = T.one_step_deflator_set(one_step_tree(2.0, 0.5, mid=1.0), "r")
    assert os_.status == "multi" and os_.dimension == 1
    y = os_.particular
    assert np.all(y > 0) and np.isclose(y.mean(), 1.0)


def test_up_only_is_arbitrage():
    t = one_step_tree(2.0, 1.5, p=[0.5, 0.5])
    os_ = T.one_step_deflator_set(t, "r")
    assert os_.status == "empty"
    assert os_.witness[0] > 0
    rep = T.na1_probe(t)
    assert not rep.viable and np.all(rep.payoff >= 0) and rep.payoff.max() > 0
    with pytest.raises(T.NA1Error):
        T.sample_deflators(t, 3)


def test_weak_up_is_arbitrage():
    rep = T.na1_probe(one_step_tree(1.0, 2.0, p=[0.5, 0.5]))
    assert not rep.viable and rep.theta[0] > 0


def test_tree_validation():
    with pytest.raises(T.TreeError):
        T.EventTree.from_nodes([{"id": "r", "parent": None, "prices": [1.0]},
                                {"id": "a", "parent": "r", "prob": 0.4, "prices": [1.0]}])
    with pytest.raises(T.TreeError):
        T.EventTree.from_nodes([{"id": "r", "parent": None, "prices": [1.0]},
                                {"id": "a", "parent": "r", "prob": 1.0, "prices": [1.0, 2.0]}])


# ---------------------------------------------------------------- deflators


def test_sample_deflators():
    t = one_step_tree(2.0, 0.5)
    Ys = T.sample_deflators(t, 5)
    assert all(np.allclose(Y, Ys[0]) for Y in Ys)
    t3 = T.EventTree.from_json(load_json("trinomial"))
    Ys = T.sample_deflators(t3, 10, seed=3)
    assert len({tuple(np.round(Y, 12)) for Y in Ys}) == 10
    assert all(T.is_deflator(t3, Y) for Y in Ys)
    flat = T.EventTree.from_nodes([{"id": "r", "parent": None, "prices": [1.0]},
                                   {"id": "a", "parent": "r", "prob": 1.0, "prices": [1.0]}])
    assert np.all(T.sample_deflators(flat, 1)[0] == 1.0)


def test_martingale_checks():
    t = binomial2()
    assert T.is_martingale(t, np.full(len(t), 3.0)).ok
    Y = T.sample_deflators(t, 1)[0]
    X = T.strategy_wealth(t, 1.0, {k: np.array([0.3]) for k in t.internal()})
    assert T.is_martingale(t, Y * X).ok
    Z = -np.array([nd.depth for nd in t.nodes], float)
    assert T.is_supermartingale(t, Z).ok and not T.is_martingale(t, Z).ok


# ---------------------------------------------------------------- superhedging


def test_call_values():
    for name, attained in (("binomial", True), ("trinomial", False)):
        data = load_json(name)
        t = T.EventTree.from_json(data)
        dK = T.claim_stream(t, t.as_values(data["claim"], default=0.0))
        sh = T.superhedge(t, dK)
        assert abs(sh.x - 1 / 3) <= 1e-12
        assert abs(sh.theta[0][0] - 2 / 3) <= 1e-12
        dv = T.dual_value(t, dK)
        assert abs(dv.value - 1 / 3) <= 1e-12 and dv.attained == attained


def test_zero_stream():
    t = T.EventTree.from_json(load_json("trinomial"))
    sh = T.superhedge(t, np.zeros(len(t)))
    assert sh.x == 0 and np.all(sh.theta[0] == 0)
    assert T.dual_value(t, np.zeros(len(t))).value == 0
    assert not T.minimal_financing(t, np.zeros(len(t))).any()


def test_minimal_financing_examples():
    t = binomial2()
    bond = T.claim_stream(t, np.ones(4))
    assert np.isclose(T.minimal_financing(t, bond)[0], 1.0)
    call = T.claim_stream(t, np.maximum(np.array([4.0, 1.0, 1.0, 0.25]) - 1.0, 0.0))
    # q = (1/3, 2/3) at every node
    q = np.array([1 / 3, 2 / 3])
    Vu, Vd = q @ [3.0, 0.0], q @ [0.0, 0.0]
    X = T.minimal_financing(t, call)
    assert np.allclose(X[:3], [q @ [Vu, Vd], Vu, Vd])


@pytest.mark.parametrize("seed", range(15))
def test_primal_matches_lp_and_dual(seed):
    t = T.random_tree(seed)
    rng = np.random.default_rng(seed)
    dK = rng.uniform(0, 1, len(t)) * (rng.random(len(t)) < 0.6)
    sh = T.superhedge(t, dK)
    assert np.allclose(sh.value, lp_superhedge(t, dK), atol=1e-8)
    assert abs(sh.x - T.dual_value(t, dK).value) <= 1e-8


# ---------------------------------------------------------------- decomposition


def test_strategy_wealth_has_no_withdrawals():
    t = T.random_tree(4)
    rng = np.random.default_rng(0)
    X = T.strategy_wealth(t, 2.0, {k: rng.normal(size=t.nodes[k].traded.size)
                                   for k in t.internal()})
    dec = T.optional_decompose(t, X)
    assert isinstance(dec, T.Decomposition)
    assert dec.reconstruction_error <= 1e-10 and dec.K.max() <= 1e-10


def test_american_envelope_withdraws_at_early_exercise():
    t = binomial2()
    q = np.array([1 / 3, 2 / 3])
    h = t.as_values({"r": 0.0, "u": 0.1, "d": 5.0, "uu": 1.0, "ud": 0.0, "du": 2.0, "dd": 0.0})
    X = h.copy()
    exercise = set()
    for k in reversed(t.internal()):
        cont = q @ X[t.nodes[k].children]
        if h[k] > cont:
            exercise.add(k)
        X[k] = max(h[k], cont)
    dec = T.optional_decompose(t, X)
    assert dec.reconstruction_error <= 1e-12
    assert exercise == {k for k in t.internal() if dec.node_slack[k] > 1e-12}
    for k in t.internal():
        kids = t.nodes[k].children
        assert np.allclose(dec.dK[kids], dec.node_slack[k], atol=1e-12)


def test_violation_is_rejected_with_witness():
    t = T.EventTree.from_json(load_json("trinomial"))
    # the root value is below the call's superhedging price 1/3
    X = t.as_values({"root": 0.2, "up": 1.0, "mid": 0.0, "down": 0.0})
    rej = T.optional_decompose(t, X)
    assert isinstance(rej, T.Rejection)
    assert T.verify_rejection(t, X, rej)


@given(st.integers(0, 10_000))
def test_decompose_or_reject(seed):
    t = T.random_tree(seed, max_nodes=25)
    X = np.random.default_rng(seed).uniform(0, 2, len(t))
    res = T.optional_decompose(t, X)
    if isinstance(res, T.Rejection):
        assert T.verify_rejection(t, X, res)
    else:
        assert res.reconstruction_error <= 1e-10 and res.dK.min() >= 0


# ---------------------------------------------------------------- completeness


def test_completeness_fixtures():
    assert T.is_complete(T.EventTree.from_json(load_json("binomial")))
    assert not T.is_complete(T.EventTree.from_json(load_json("trinomial")))
    assert T.is_complete(T.EventTree.from_json(load_json("trinomial2")))


def test_replicability_examples():
    t = binomial2()
    rng = np.random.default_rng(0)
    assert T.replicable(t, rng.uniform(0, 3, 4)).replicable
    t3 = T.EventTree.from_json(load_json("trinomial"))
    rep = T.replicable(t3, np.array([1.0, 0.0, 0.0]))
    assert not rep.replicable and rep.dK.max() > 0
    assert T.replicable(t3, np.full(3, 2.5)).replicable


@pytest.mark.parametrize("seed", range(10))
def test_complete_iff_indicators_replicable(seed):
    t = T.random_tree(seed, max_nodes=30)
    assert T.is_complete(t) == T.indicator_claims_replicable(t)


# ---------------------------------------------------------------- numeraire


def test_binomial_log_optimal_weight():
    t = one_step_tree(2.0, 0.5)
    ns = T.supermartingale_numeraire_tree(t)
    assert ns.weights[0][0] == 0.5
    assert ns.X.tolist() == [1.0, 1.5, 0.75]


def test_deterministic_tree_numeraire():
    flat = T.EventTree.from_nodes([{"id": "r", "parent": None, "prices": [1.0]},
                                   {"id": "a", "parent": "r", "prob": 1.0, "prices": [1.0]}])
    assert np.all(T.supermartingale_numeraire_tree(flat).X == 1.0)
    up = T.EventTree.from_nodes([{"id": "r", "parent": None, "prices": [1.0]},
                                 {"id": "a", "parent": "r", "prob": 1.0, "prices": [1.1]}])
    with pytest.raises(T.NA1Error):
        T.supermartingale_numeraire_tree(up)


def test_two_epoch_numeraire_is_multiplicative():
    t = T.EventTree.from_json(load_json("two_epoch"))
    ns = T.supermartingale_numeraire_tree(t)
    for k, nd in enumerate(t.nodes):
        prod = np.prod([ns.epoch_factor[e][k] for e in ns.epoch_factor])
        assert np.isclose(prod, ns.X[k], rtol=1e-14)
    for Y in T.sample_deflators(t, 20, seed=1):
        assert T.is_martingale(t, Y * ns.X).ok
