"""Monte Carlo estimators, supermartingale tests and refinement studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import norm

from . import kernels


class DataError(ValueError):
    """Samples are unusable (non-finite or too few)."""


@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error ``std / sqrt(n)``."""

    mean: float
    se: float
    n: int
    checkpoint: float | None = None


def mean_with_se(samples, checkpoint=None) -> Estimate:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DataError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain NaN or infinity")
    # np.sum uses pairwise summation, so the result is order-fixed
    mean = float(np.sum(x) / x.size)
    sd = float(np.sqrt(np.sum((x - mean) ** 2) / (x.size - 1)))
    return Estimate(mean, sd / math.sqrt(x.size), int(x.size), checkpoint)


def bonferroni_z(n_tests: int, base_z: float = 3.0) -> float:
    """One-sided z level keeping the family error at that of ``base_z``."""
    tail = norm.sf(base_z)
    return float(norm.isf(tail / max(1, n_tests)))


@dataclass
class PairResult:
    s: float
    t: float
    bucket: int | None
    diff: float
    se: float
    z: float
    margin: float
    verdict: bool

    def as_dict(self):
        return {"s": self.s, "t": self.t, "bucket": self.bucket, "diff": self.diff,
                "se": self.se, "z": self.z, "margin": self.margin,
                "verdict": "PASS" if self.verdict else "FAIL"}


@dataclass
class SupermartingaleReport:
    pairs: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.verdict for p in self.pairs)

    @property
    def worst_margin(self) -> float:
        return min(p.margin for p in self.pairs) if self.pairs else math.inf

    def as_dict(self):
        return {"verdict": "PASS" if self.passed else "FAIL",
                "worst_margin": self.worst_margin,
                "pairs": [p.as_dict() for p in self.pairs]}


def _pair(xs, xt, z):
    d = xt - xs
    if np.all(d == d[0]):
        est = Estimate(float(d[0]), 0.0, d.size)
    else:
        est = mean_with_se(d)
    margin = z * est.se - est.mean
    return est, margin


def supermartingale_test(X, checkpoints, times=None, level: float = 3.0,
                         buckets: int = 4, conditional: bool = True) -> SupermartingaleReport:
    """Test ``E[X(t)] <= E[X(s)] + z SE`` for all ordered checkpoint pairs.

    The SE is that of the paired difference ``X(t) - X(s)``.  With
    ``conditional`` the test is repeated within ``buckets`` groups of paths
    formed by the rank of ``X(s)``.  ``z`` is the Bonferroni-corrected
    version of ``level`` over all tests performed.
    """
    X = np.asarray(X, float)
    if not np.all(np.isfinite(X[:, list(checkpoints)])):
        raise DataError("paths contain NaN or infinity")
    times = np.arange(X.shape[1]) if times is None else np.asarray(times)
    pairs = list(combinations(sorted(checkpoints), 2))
    n_groups = 1 + (buckets if conditional else 0)
    z = bonferroni_z(len(pairs) * n_groups, level)
    rep = SupermartingaleReport()
    for s, t in pairs:
        est, margin = _pair(X[:, s], X[:, t], z)
        rep.pairs.append(PairResult(float(times[s]), float(times[t]), None, est.mean,
                                    est.se, z, margin, margin >= 0))
        if not conditional:
            continue
        order = np.argsort(X[:, s], kind="stable")
        for b, idx in enumerate(np.array_split(order, buckets)):
            if idx.size < 2:
                continue
            est, margin = _pair(X[idx, s], X[idx, t], z)
            rep.pairs.append(PairResult(float(times[s]), float(times[t]), b, est.mean,
                                        est.se, z, margin, margin >= 0))
    return rep


def empirical_order(dts, errors) -> float:
    """Least-squares slope of log(error) against log(dt).

    Returns ``inf`` when every error is zero (exact at all resolutions).
    """
    dts = np.asarray(dts, float)
    errors = np.asarray(errors, float)
    if np.all(errors == 0):
        return math.inf
    if np.any(errors <= 0):
        return math.nan
    slope, _ = np.polyfit(np.log(dts), np.log(errors), 1)
    return float(slope)


@dataclass
class RefinementRow:
    diagnostic: str
    dts: list
    errors: list
    order: float
    threshold: float = 0.8
    applicable: bool = True

    @property
    def verdict(self) -> bool:
        if not self.applicable:
            return True
        return self.order >= self.threshold

    def as_dict(self):
        return {"diagnostic": self.diagnostic, "dts": self.dts, "errors": self.errors,
                "order": self.order, "applicable": self.applicable,
                "verdict": "PASS" if self.verdict else ("N/A" if not self.applicable else "FAIL")}


@dataclass
class RefinementReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.verdict for r in self.rows)

    def row(self, name) -> RefinementRow:
        for r in self.rows:
            if r.diagnostic == name:
                return r
        raise KeyError(name)

    def as_dict(self):
        return {"verdict": "PASS" if self.passed else "FAIL",
                "rows": [r.as_dict() for r in self.rows]}


def refinement_study(model, horizon: float, steps_list, n_paths: int, seed: int,
                     threshold: float = 0.8) -> RefinementReport:
    """Sup-norm diagnostics under step halving with shared Brownian paths.

    The finest grid is simulated; coarser grids reuse the same Brownian
    increments by summing normals, so all resolutions see one Brownian path.
    Each error is the mean over paths of the sup over grid times.

    Diagnostics: ``relative_wealth`` (relative wealth vs its stochastic-exponential
    representation), ``deflated_ratio`` (deflated ratio vs its martingale
    integral) and ``wealth_gap`` (multiplicative vs exponential wealth).
    """
    from . import market, portfolio
    from .numeraire import assemble_numeraire

    if np.any(model.events.probs):
        raise ValueError("refinement studies need event times that do not depend on the grid")
    steps_list = sorted(int(s) for s in steps_list)
    fine = steps_list[-1]
    for s in steps_list:
        if fine % s:
            raise ValueError("step counts must divide the finest one")
    U = model.universe
    n_sched = len(model.events.scheduled)
    normals = np.empty((n_paths, fine, U))
    marks_u = np.zeros((n_paths, n_sched, kernels.N_UNIFORMS))
    marks_z = np.zeros((n_paths, n_sched, 2))
    for p in range(n_paths):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), p])))
        normals[p] = rng.standard_normal((fine, U))
        # one mark per scheduled event, shared by every resolution
        marks_u[p] = rng.random((n_sched, kernels.N_UNIFORMS))
        marks_z[p] = rng.standard_normal((n_sched, 2))
    deterministic = not np.any(model.cov)
    errs = {"relative_wealth": [], "deflated_ratio": [], "wealth_gap": []}
    dts = []
    for steps in steps_list:
        f = fine // steps
        z = normals.reshape(n_paths, steps, f, U).sum(axis=2) / math.sqrt(f)
        grid = market.TimeGrid.uniform(horizon, steps)
        ens = _simulate_from_normals(model, grid, z, marks_u, marks_z)
        dR = ens.returns()
        dec = market.decompose_returns(model, ens, "model", dR)
        eq = np.where(ens.step_live(), 1.0 / ens.step_dims()[..., None], 0.0)
        X_mult = portfolio.wealth_of_portfolio(eq, dR, "mult").wealth
        X_exp = portfolio.wealth_of_portfolio(eq, dR, "exp").wealth
        if deterministic:
            # no martingale part: only the wealth variants can be compared,
            # and a drifting riskless asset has no numéraire anyway
            errs["relative_wealth"].append(float("nan"))
            errs["deflated_ratio"].append(float("nan"))
        else:
            rates = market.local_rates(dec.dA, dec.dC, grid.dt[None, :], "calendar")
            rho = assemble_numeraire(rates, ens.step_dims(), ens.epoch_index())
            d_rw = portfolio.relative_wealth_discrepancy(eq, rho, dR)
            shares = portfolio.strategy_from_portfolio(eq, X_mult, ens.step_left())
            res = portfolio.deflated_ratio_representation(
                1.0, shares, rho, ens.step_left(), ens.step_right(), dec.dM, variant="exp")
            errs["relative_wealth"].append(float(np.mean(d_rw)))
            errs["deflated_ratio"].append(float(np.mean(res.residual)))
        errs["wealth_gap"].append(float(np.mean(np.abs(X_mult - X_exp).max(axis=1))))
        dts.append(horizon / steps)
    rep = RefinementReport()
    for name, e in errs.items():
        applicable = not (deterministic and name != "wealth_gap")
        order = empirical_order(dts, e) if applicable else float("nan")
        rep.rows.append(RefinementRow(name, dts, e, order, threshold, applicable))
    return rep


def _simulate_from_normals(model, grid, normals, marks_u=None, marks_z=None):
    from .market import Ensemble, _KINDS, _SCHEMES

    P, J, U = normals.shape
    ev = model.events
    sched = ev.schedule(grid)
    uniforms = np.zeros((P, J, kernels.N_UNIFORMS))
    ipo_z = np.zeros((P, J, 2))
    for k, j in enumerate(np.flatnonzero(sched)):
        # marks go to scheduled events in time order, identically on every grid
        uniforms[:, j] = marks_u[:, k]
        ipo_z[:, j] = marks_z[:, k]
    out = kernels.simulate(
        _KINDS[model.kind], _SCHEMES[model.scheme], model.initial_prices,
        np.arange(model.initial_prices.size, dtype=np.int64), model.drift, model.chol,
        float(model.kappa), model.theta, np.asarray(grid.times), np.ascontiguousarray(normals),
        uniforms, ipo_z, sched, np.zeros(4), ev.ipo_code, float(ev.ipo_a), float(ev.ipo_b), U)
    return Ensemble(grid, *out, model_id=model.model_id())
