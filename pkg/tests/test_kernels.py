import numpy as np
import pytest

from piecewise_market import _jit, kernels
from piecewise_market.market import EventLaw, MarketModel, _KINDS, _SCHEMES, draw_marks
from piecewise_market.ustate import TimeGrid

needs_numba = pytest.mark.skipif(not _jit.HAVE_NUMBA, reason="numba not installed")


def sim_args(kind="gbm", scheme="log", P=40, J=24, law=None, seed=0):
    law = law or EventLaw(p_entry=0.05, p_exit=0.05, p_split=0.03, p_merge=0.03,
                          ipo="lognormal", ipo_a=0.0, ipo_b=0.2)
    U = 10
    m = MarketModel([1.0, 1.5, 0.7], np.linspace(0.02, 0.1, U), 0.03 * np.eye(U) + 0.01,
                    kind=kind, scheme=scheme, kappa=0.5, events=law)
    g = TimeGrid.uniform(1.0, J)
    normals, uniforms, ipo_z = draw_marks(seed, 0, P, J, U, True)
    return (_KINDS[m.kind], _SCHEMES[m.scheme], m.initial_prices, np.arange(3, dtype=np.int64),
            m.drift, m.chol, float(m.kappa), m.theta, np.asarray(g.times), normals, uniforms,
            ipo_z, law.schedule(g), law.probs, law.ipo_code, float(law.ipo_a), float(law.ipo_b), U)


@needs_numba
@pytest.mark.parametrize("kind,scheme", [("gbm", "log"), ("gbm", "euler"),
                                         ("mean_reverting", "log"), ("constant", "euler")])
def test_simulate_backends_agree(kind, scheme):
    args = sim_args(kind, scheme)
    a = kernels.simulate_numba(*args)
    b = kernels.simulate_numpy(*args)
    for x, y in zip(a, b):
        if x.dtype.kind == "f":
            assert np.allclose(x, y, rtol=1e-12, atol=1e-12, equal_nan=True)
        else:
            assert np.array_equal(x, y)


@needs_numba
def test_wealth_and_rank_backends_agree(rng):
    w = rng.normal(size=(20, 30, 4))
    r = rng.normal(0, 0.05, size=(20, 30, 4))
    assert np.allclose(kernels.wealth_products_numba(w, r), kernels.wealth_products_numpy(w, r),
                       rtol=1e-13)
    vals = rng.integers(0, 4, size=(20, 30, 5)).astype(float)
    dims = rng.integers(1, 6, size=(20, 30))
    vals[np.arange(5) >= dims[..., None]] = np.nan
    assert np.array_equal(kernels.ranks_numba(vals, dims), kernels.ranks_numpy(vals, dims))


def test_dispatch_follows_flag(monkeypatch):
    w = np.zeros((1, 2, 1))
    monkeypatch.setattr(_jit, "USE_NUMBA", False)
    assert np.array_equal(kernels.wealth_products(w, w), np.ones((1, 3)))


def test_events_preserve_bookkeeping():
    prices, post, dims, dims_post, ids, reset = kernels.simulate_numpy(*sim_args(P=60, J=40))
    assert np.all(dims >= 1) and np.all(dims_post >= 1)
    # the dimension after t_j persists until t_{j+1}
    assert np.array_equal(dims[:, 1:], dims_post[:, :-1])
    assert np.array_equal(dims_post[~reset], dims[~reset])
    # live ids are distinct and padding ids are -1
    for p in range(60):
        for j in range(41):
            live = ids[p, j, : dims_post[p, j]]
            assert len(set(live.tolist())) == live.size and np.all(live >= 0)
            assert np.all(ids[p, j, dims_post[p, j]:] == -1)
