"""Ranks and the top-m open market.

Ranks are 1-based (rank 1 is the largest capitalization); ties go to the
smaller index.  Component indices returned to callers are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .numeraire import NonViableError, range_residual


def ranks_of(v) -> np.ndarray:
    """1-based rank of every component of ``v``."""
    v = np.asarray(v, float)
    return kernels.ranks(v[None, None, :], np.array([[v.size]]))[0, 0]


def ranked_value(v, k: int):
    """The k-th largest entry of ``v`` and its (0-based) index.

    Among equal entries the smaller index ranks higher.
    """
    v = np.asarray(v, float)
    if not 1 <= k <= v.size:
        raise ValueError(f"rank {k} out of range 1..{v.size}")
    i = int(np.nonzero(ranks_of(v) == k)[0][0])
    return float(v[i]), i


def rank_max_min(v, k: int) -> float:
    """``max`` over k-element index sets of the ``min`` of the entries (brute force)."""
    v = np.asarray(v, float)
    if not 1 <= k <= v.size:
        raise ValueError(f"rank {k} out of range 1..{v.size}")
    return max(min(v[list(c)]) for c in combinations(range(v.size), k))


def rank_process(left, step_dims) -> np.ndarray:
    """Predictable ranks: the rank sampled at ``t_j`` governs step j.

    ``left`` is (..., J, W) post-reset prices; padding gets rank ``W + 1``.
    """
    left = np.asarray(left, float)
    lead = left.shape[:-2]
    J, W = left.shape[-2:]
    u = kernels.ranks(left.reshape(-1, J, W), np.asarray(step_dims).reshape(-1, J))
    return u.reshape(lead + (J, W))


def censor_returns(dR, u, m: int) -> np.ndarray:
    """``1{u_i <= m} dR_i`` stepwise."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.where(np.asarray(u) <= m, dR, 0.0)


@dataclass(eq=False)
class CensoredRates:
    alpha: np.ndarray
    c: np.ndarray
    D: np.ndarray


def censored_rates(alpha, c, u, m: int) -> CensoredRates:
    """``alpha~ = D alpha`` and ``c~ = D c D`` with D the diagonal top-m indicator."""
    if m < 1:
        raise ValueError("m must be >= 1")
    ind = (np.asarray(u) <= m).astype(float)
    D = ind[..., :, None] * np.eye(ind.shape[-1])
    a = np.einsum("...ij,...j->...i", D, alpha)
    cc = D @ np.asarray(c, float) @ D
    return CensoredRates(a, cc, D)


@dataclass(eq=False)
class TopMNumeraire:
    rho: np.ndarray
    growth: np.ndarray
    in_range: np.ndarray


def top_m_numeraire(censored: CensoredRates, raise_on_nonviable: bool = False) -> TopMNumeraire:
    """``rho = (c~)^dagger alpha~`` and ``g~ = alpha~ . rho / 2`` per step."""
    rho, r, nr, ok = range_residual(censored.alpha, censored.c)
    if raise_on_nonviable and not np.all(ok):
        where = tuple(int(i) for i in np.argwhere(~np.atleast_1d(ok))[0]) if np.ndim(ok) else ()
        phi = r[where] / nr[where] ** 2
        raise NonViableError(f"top-m market is not viable at {where}", {"index": where}, phi)
    g = np.where(ok, 0.5 * np.einsum("...i,...i->...", censored.alpha, rho), np.inf)
    return TopMNumeraire(rho, g, ok)


def is_top_m_portfolio(pi, u, m: int):
    """Whether ``pi_i 1{u_i > m} = 0`` everywhere; returns ``(ok, first_violation)``."""
    bad = (np.asarray(pi) != 0) & (np.asarray(u) > m)
    if not bad.any():
        return True, None
    return False, tuple(int(i) for i in np.argwhere(bad)[0])


def restrict_to_top_m(pi, u, m: int) -> np.ndarray:
    """Zero the weights of assets ranked below m."""
    return np.where(np.asarray(u) <= m, pi, 0.0)


def turnover_stats(u, m: int, reset=None) -> dict:
    """Rank-change counts along paths.

    Steps immediately after a reset are excluded because the index set
    itself changes there.
    """
    u = np.asarray(u)
    changed = np.any(u[..., 1:, :] != u[..., :-1, :], axis=-1)
    top = u <= m
    top_changed = np.any(top[..., 1:, :] != top[..., :-1, :], axis=-1)
    if reset is not None:
        keep = ~np.asarray(reset)[..., 1:-1]
        changed = changed & keep
        top_changed = top_changed & keep
    per_path = changed.sum(axis=-1)
    per_path_top = top_changed.sum(axis=-1)
    return {
        "m": int(m),
        "mean_rank_changes": float(np.mean(per_path)),
        "max_rank_changes": int(np.max(per_path, initial=0)),
        "mean_top_m_changes": float(np.mean(per_path_top)),
        "fraction_paths_with_top_m_change": float(np.mean(per_path_top > 0)),
    }
