"""Compare the numba kernels with their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --paths 5000 --steps 256 --repeat 5
    python benchmarks/bench_kernels.py --output bench.json

The numba timings exclude compilation (one warm-up call per kernel).
"""

import argparse
import json
import time

import numpy as np

from piecewise_market import _jit, kernels
from piecewise_market.market import _KINDS, _SCHEMES, EventLaw, MarketModel, draw_marks
from piecewise_market.ustate import TimeGrid


def simulation_args(P, J, U=10, seed=0):
    law = EventLaw(p_entry=0.02, p_exit=0.02, p_split=0.01, p_merge=0.01,
                   ipo="lognormal", ipo_a=0.0, ipo_b=0.2)
    m = MarketModel([1.0, 1.5, 0.7], np.linspace(0.02, 0.1, U), 0.03 * np.eye(U) + 0.01,
                    kind="gbm", events=law)
    g = TimeGrid.uniform(1.0, J)
    normals, uniforms, ipo_z = draw_marks(seed, 0, P, J, U, True)
    return (_KINDS[m.kind], _SCHEMES[m.scheme], m.initial_prices, np.arange(3, dtype=np.int64),
            m.drift, m.chol, float(m.kappa), m.theta, np.asarray(g.times), normals, uniforms,
            ipo_z, law.schedule(g), law.probs, law.ipo_code, float(law.ipo_a), float(law.ipo_b), U)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=256)
    ap.add_argument("--width", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--output", help="write results as JSON")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    P, J, W = args.paths, args.steps, args.width
    w = rng.normal(0, 0.3, size=(P, J, W))
    r = rng.normal(0, 0.02, size=(P, J, W))
    vals = rng.lognormal(size=(P, J, W))
    dims = rng.integers(1, W + 1, size=(P, J)).astype(np.int64)
    vals[np.arange(W) >= dims[..., None]] = np.nan
    cases = {
        "simulate": (kernels.simulate_numba, kernels.simulate_numpy, simulation_args(P, J)),
        "wealth_products": (kernels.wealth_products_numba, kernels.wealth_products_numpy, (w, r)),
        "ranks": (kernels.ranks_numba, kernels.ranks_numpy, (vals, dims)),
    }

    results = {}
    print(f"paths={P} steps={J} width={W} numba={'yes' if _jit.HAVE_NUMBA else 'no'}")
    print(f"{'kernel':<16}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, (fast, slow, a) in cases.items():
        t_np = best_of(slow, a, args.repeat)
        if _jit.HAVE_NUMBA:
            fast(*a)  # compile
            t_nb = best_of(fast, a, args.repeat)
            speed = t_np / t_nb
        else:
            t_nb = speed = float("nan")
        results[name] = {"numpy": t_np, "numba": t_nb, "speedup": speed}
        print(f"{name:<16}{t_np:>12.4f}{t_nb:>12.4f}{speed:>9.1f}x")

    if args.output:
        with open(args.output, "w") as fh:
            json.dump({"paths": P, "steps": J, "width": W, "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
