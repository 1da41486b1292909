"""Portfolios, strategies and wealth processes.

Batch functions take step arrays of shape (P, J, W): the weight or share
record at ``t_j`` (index j) is held on ``(t_j, t_{j+1}]``.  Padding
components beyond the current dimension carry zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .market import DomainError
from .ustate import Predictable, ResetSequence, UPath, piecewise_integral


class AdmissibilityError(ValueError):
    """Wealth is not strictly positive where it must be."""


class PreconditionError(ValueError):
    """The baseline portfolio does not satisfy the structural condition."""


@dataclass(eq=False)
class WealthResult:
    """Wealth paths and positivity diagnostics.

    ``first_nonpositive[p]`` is the first step whose factor ``1 + dR_pi``
    is <= 0 (or -1 when there is none).
    """

    wealth: np.ndarray
    factors: np.ndarray
    first_nonpositive: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.first_nonpositive < 0


def _as3d(a):
    a = np.asarray(a, float)
    return a.reshape((-1,) + a.shape[-2:]), a.shape[:-2]


def portfolio_returns(weights, dR) -> np.ndarray:
    """``dR_pi = sum_i pi_i dR_i`` per step."""
    return np.einsum("...i,...i->...", np.asarray(weights, float), np.asarray(dR, float))


def wealth_of_portfolio(weights, dR, variant: str = "mult") -> WealthResult:
    """Wealth ``X_pi`` with ``X_pi(0) = 1``.

    ``mult`` is the product of ``1 + dR_pi``; ``exp`` is
    ``exp(sum dR_pi - [R_pi]/2)`` with realized quadratic variation.
    """
    w3, lead = _as3d(weights)
    r3, _ = _as3d(dR)
    y = np.einsum("pji,pji->pj", w3, r3)
    factors = 1.0 + y
    bad = factors <= 0
    first = np.where(bad.any(axis=1), bad.argmax(axis=1), -1)
    if variant == "mult":
        X = kernels.wealth_products(w3, r3)
    elif variant == "exp":
        X = np.ones((y.shape[0], y.shape[1] + 1))
        X[:, 1:] = np.exp(np.cumsum(y - 0.5 * y * y, axis=1))
    else:
        raise ValueError(f"unknown wealth variant {variant!r}")
    n = y.shape[1]
    return WealthResult(X.reshape(lead + (n + 1,)), factors.reshape(lead + (n,)),
                        first.reshape(lead))


def wealth_of_strategy(x: float, theta: Predictable, S: UPath, resets: ResetSequence | None = None):
    """``X = x + theta . S`` for one path and its admissibility class.

    Returns ``(X, cls)`` with ``cls`` one of ``strict``, ``admissible`` or
    ``inadmissible``.
    """
    if not theta.in_L0:
        raise ValueError("strategies start from the zero vector")
    X = x + piecewise_integral(theta, S, resets)
    return X, classify_wealth(X)


def classify_wealth(X) -> str:
    X = np.asarray(X)
    if np.all(X > 0):
        return "strict"
    if np.all(X >= 0):
        return "admissible"
    return "inadmissible"


def wealth_of_shares(x, shares, left, right) -> np.ndarray:
    """Batch ``x + theta . S`` from step arrays of post-reset left prices and right prices."""
    gains = np.nan_to_num(np.asarray(shares, float) * (np.asarray(right) - np.asarray(left)))
    g = gains.sum(axis=-1)
    out = np.empty(g.shape[:-1] + (g.shape[-1] + 1,))
    out[..., 0] = x
    out[..., 1:] = x + np.cumsum(g, axis=-1)
    return out


def strategy_from_portfolio(weights, X_pi, left) -> np.ndarray:
    """Shares ``theta_i = X_pi(t_j) pi_i / S_i(t_j+)``."""
    weights = np.asarray(weights, float)
    left = np.asarray(left, float)
    active = weights != 0
    if np.any(active & ~(left > 0)):
        p = tuple(int(i) for i in np.argwhere(active & ~(left > 0))[0])
        raise DomainError(f"nonpositive price where the portfolio invests, at {p}")
    with np.errstate(invalid="ignore", divide="ignore"):
        sh = np.asarray(X_pi)[..., :-1, None] * weights / left
    return np.where(active, sh, 0.0)


def portfolio_from_strategy(x, shares, left, right) -> np.ndarray:
    """Weights ``pi_i = S_i theta_i / X`` of a strictly admissible strategy."""
    X = wealth_of_shares(x, shares, left, right)
    if np.any(X <= 0):
        raise AdmissibilityError("strategy wealth is not strictly positive")
    sh = np.asarray(shares, float)
    return np.where(sh != 0, np.nan_to_num(np.asarray(left) * sh) / X[..., :-1, None], 0.0)


def relative_wealth(X_pi, X_rho) -> np.ndarray:
    X_rho = np.asarray(X_rho, float)
    if np.any(X_rho <= 0):
        raise AdmissibilityError("baseline wealth hits zero")
    return np.asarray(X_pi, float) / X_rho


def relative_return_exponential(weights, rho, dR) -> np.ndarray:
    """Continuous-model value of ``E(R^rho_pi)``.

    ``exp(R_{pi-rho} - C_{pi pi}/2 + C_{rho rho}/2)`` with realized
    covariations.
    """
    y_pi = portfolio_returns(weights, dR)
    y_rho = portfolio_returns(rho, dR)
    incr = (y_pi - y_rho) - 0.5 * y_pi ** 2 + 0.5 * y_rho ** 2
    out = np.ones(incr.shape[:-1] + (incr.shape[-1] + 1,))
    out[..., 1:] = np.exp(np.cumsum(incr, axis=-1))
    return out


def relative_wealth_discrepancy(weights, rho, dR) -> np.ndarray:
    """Per path ``sup_t |X_pi/X_rho - E(R^rho_pi)|`` with multiplicative wealth."""
    ratio = relative_wealth(wealth_of_portfolio(weights, dR).wealth,
                            wealth_of_portfolio(rho, dR).wealth)
    return np.abs(ratio - relative_return_exponential(weights, rho, dR)).max(axis=-1)


@dataclass(eq=False)
class DeflatedRatio:
    eta: np.ndarray
    ratio: np.ndarray
    integral: np.ndarray
    residual: np.ndarray


def deflated_ratio_representation(x, shares, rho, left, right, dM, variant: str = "exp",
                                  structural=None, tol: float = 1e-8) -> DeflatedRatio:
    """Compare ``X / X_rho`` with ``x + sum eta dM``.

    ``eta_i = (S_i theta_i - X rho_i) / X_rho`` is sampled at ``t_j``.
    ``structural`` may be a :class:`~piecewise_market.numeraire.StructuralReport`
    for ``rho``; a failed report raises :class:`PreconditionError`.
    """
    if structural is not None and not structural.is_numeraire_candidate:
        raise PreconditionError(
            f"baseline violates the structural condition "
            f"(residual {structural.max_step_residual:.3e})")
    left = np.asarray(left, float)
    right = np.asarray(right, float)
    shares = np.asarray(shares, float)
    live = ~np.isnan(left)
    with np.errstate(invalid="ignore", divide="ignore"):
        dR = np.where(live, (right - left) / left, 0.0)
    X = wealth_of_shares(x, shares, left, right)
    X_rho = wealth_of_portfolio(rho, dR, variant).wealth
    ratio = relative_wealth(X, X_rho)
    held = np.nan_to_num(left * shares)
    eta = (held - X[..., :-1, None] * np.asarray(rho)) / X_rho[..., :-1, None]
    eta = np.where(live, eta, 0.0)
    integral = np.empty_like(ratio)
    integral[..., 0] = x
    integral[..., 1:] = x + np.cumsum(np.einsum("...i,...i->...", eta, np.nan_to_num(dM)), axis=-1)
    residual = np.abs(ratio - integral).max(axis=-1)
    return DeflatedRatio(eta, ratio, integral, residual)
