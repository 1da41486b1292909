"""Growth-optimal (numéraire) portfolios, growth rates and deflators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mcstats
from .market import RatesPath, decompose_returns, local_rates

RANK_CUTOFF = 1e-10
SYM_TOL = 1e-12
RANGE_TOL = 1e-8


class InputError(ValueError):
    """Matrix input is not symmetric PSD within tolerance."""


class NonViableError(ValueError):
    """Some step has a drift outside the range of the covariation.

    Attributes
    ----------
    witness : dict
        ``k``, ``n``, ``step`` (and ``path`` for ensembles) of the first
        offending step.
    phi : ndarray
        Direction with ``c phi = 0`` and ``phi . alpha = 1`` at that step.
    """

    def __init__(self, msg, witness, phi):
        super().__init__(msg)
        self.witness = witness
        self.phi = phi


def _swap(a):
    return np.swapaxes(a, -1, -2)


def pseudo_inverse(c, rel_cutoff: float = RANK_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of symmetric PSD matrices.

    Works on stacks ``(..., n, n)``.  Eigenvalues below
    ``rel_cutoff * lambda_max`` are treated as zero.
    """
    c = np.asarray(c, dtype=float)
    scale = np.maximum(1.0, np.abs(c).max(axis=(-2, -1), initial=0.0))
    asym = np.abs(c - _swap(c)).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > SYM_TOL * scale):
        raise InputError(f"matrix is not symmetric (max asymmetry {float(np.max(asym)):.3e})")
    lam, q = np.linalg.eigh(0.5 * (c + _swap(c)))
    lmax = np.abs(lam).max(axis=-1, keepdims=True, initial=0.0)
    if np.any(lam < -RANK_CUTOFF * np.maximum(lmax, 1.0)):
        raise InputError("matrix is not positive semidefinite")
    keep = (lam > rel_cutoff * lmax) & (lmax > 0)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return (q * inv[..., None, :]) @ _swap(q)


def pseudo_inverse_limit(c, m: int = 2 ** 20, dps: int = 50) -> np.ndarray:
    """``(c + I/m)^{-2} c`` evaluated in high-precision arithmetic.

    In double precision the m**2 amplification of roundoff on the null
    space swamps the answer, so the product is formed with mpmath.
    """
    import mpmath

    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    with mpmath.workdps(dps):
        A = mpmath.matrix(c.tolist())
        shifted = A + mpmath.eye(n) / mpmath.mpf(m)
        inv = shifted ** -1
        out = inv * inv * A
        return np.array([[float(out[i, j]) for j in range(n)] for i in range(n)])


@dataclass
class NumeraireResult:
    """Numéraire weights of one constant-rate market and diagnostics."""

    rho: np.ndarray
    in_range: bool
    residual: float
    growth: float
    phi: np.ndarray | None = None


def range_residual(alpha, c, cdag=None):
    """``alpha - c c^dagger alpha`` and the in-range flag (stackable)."""
    alpha = np.asarray(alpha, float)
    c = np.asarray(c, float)
    cdag = pseudo_inverse(c) if cdag is None else cdag
    rho = np.einsum("...ij,...j->...i", cdag, alpha)
    r = alpha - np.einsum("...ij,...j->...i", c, rho)
    nr = np.linalg.norm(r, axis=-1)
    ok = nr <= RANGE_TOL * (1.0 + np.linalg.norm(alpha, axis=-1))
    return rho, r, nr, ok


def arbitrage_direction(alpha, c) -> np.ndarray:
    """``phi = r / |r|^2`` with ``r = alpha - c c^dagger alpha``.

    Satisfies ``c phi = 0`` and ``phi . alpha = 1`` whenever ``r != 0``.
    """
    _, r, nr, _ = range_residual(alpha, c)
    if nr == 0:
        raise ValueError("alpha lies in the range of c; no arbitrage direction")
    return r / nr ** 2


def numeraire_dissection(alpha, c) -> NumeraireResult:
    """Weights ``c^dagger alpha`` with range test, growth rate and witness."""
    alpha = np.atleast_1d(np.asarray(alpha, float))
    c = np.atleast_2d(np.asarray(c, float))
    rho, r, nr, ok = range_residual(alpha, c)
    if ok:
        return NumeraireResult(rho, True, float(nr), 0.5 * float(alpha @ rho))
    return NumeraireResult(rho, False, float(nr), float("inf"), r / nr ** 2)


def growth_rates(pi, alpha, c) -> np.ndarray:
    """``gamma = alpha . pi - pi^T c pi / 2`` (stackable)."""
    pi = np.asarray(pi, float)
    return (np.einsum("...i,...i->...", alpha, pi)
            - 0.5 * np.einsum("...i,...ij,...j->...", pi, c, pi))


def max_growth(alpha, c):
    """Maximal growth rate per step; ``inf`` where alpha is out of range.

    Returns ``(g, in_range)``.  The infinity is set from the range flag,
    never produced by overflow.
    """
    rho, _, _, ok = range_residual(alpha, c)
    g = 0.5 * np.einsum("...i,...i->...", alpha, rho)
    return np.where(ok, g, np.inf), ok


def cumulative_growth(g, dO) -> np.ndarray:
    """``G(t_j) = sum_{l<j} g dO`` with infinity propagated; leading 0."""
    g = np.asarray(g, float)
    dO = np.asarray(dO, float)
    terms = np.where(dO > 0, np.where(np.isinf(g), np.inf, g * dO), 0.0)
    out = np.zeros(terms.shape[:-1] + (terms.shape[-1] + 1,))
    np.cumsum(terms, axis=-1, out=out[..., 1:])
    return out


def numeraire_weights(rates: RatesPath, chunk: int = 1 << 18):
    """Stepwise ``c^dagger alpha`` for stacked rates.

    Returns ``(rho, in_range, residual_norm)`` with the leading shape of
    ``rates.alpha`` minus the component axis.
    """
    alpha = rates.alpha
    c = rates.c
    lead = alpha.shape[:-1]
    W = alpha.shape[-1]
    a2 = alpha.reshape(-1, W)
    c2 = c.reshape(-1, W, W)
    # Simulated markets repeat the same covariation matrix across many
    # steps; invert each distinct matrix once.
    reps, inv = _distinct_matrices(c2)
    cdag = pseudo_inverse(c2[reps]) if reps is not None else None
    rho = np.empty_like(a2)
    ok = np.empty(a2.shape[0], bool)
    nr = np.empty(a2.shape[0])
    for s in range(0, a2.shape[0], chunk):
        sl = slice(s, s + chunk)
        cd = cdag[inv[sl]] if cdag is not None else None
        rho[sl], _, nr[sl], ok[sl] = range_residual(a2[sl], c2[sl], cd)
    return rho.reshape(lead + (W,)), ok.reshape(lead), nr.reshape(lead)


def _distinct_matrices(c2, max_distinct: int = 4096):
    """Representatives and inverse map of the distinct matrices in a stack.

    Matrices are grouped by a random projection and the grouping is then
    verified exactly; returns ``(None, None)`` when there are too many
    distinct matrices or a projection collision occurs.
    """
    flat = c2.reshape(c2.shape[0], -1)
    proj = np.random.default_rng(12345).standard_normal(flat.shape[1])
    keys = flat @ proj
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    if uniq.size > max_distinct or not np.array_equal(flat, flat[first][inv]):
        return None, None
    return first, inv


def _first_bad(ok):
    idx = np.argwhere(~ok)[0]
    return tuple(int(i) for i in idx)


def assemble_numeraire(rates: RatesPath, step_dims, epochs=None) -> np.ndarray:
    """Glue stepwise numéraire weights into one predictable process.

    ``rates.alpha`` has shape (..., J, W); the result has the same shape
    with zeros beyond each step's dimension.  The initial record is the
    zero vector.

    Raises
    ------
    NonViableError
        If any step has alpha outside the range of c.
    """
    rho, ok, _ = numeraire_weights(rates)
    if not ok.all():
        where = _first_bad(ok)
        step_dims = np.asarray(step_dims)
        j = where[-1]
        witness = {"step": j, "n": int(step_dims[where])}
        if len(where) > 1:
            witness["path"] = where[0]
        if epochs is not None:
            witness["k"] = int(np.asarray(epochs)[where])
        phi = arbitrage_direction(rates.alpha[where], rates.c[where])
        raise NonViableError(f"market is not viable at {witness}", witness, phi)
    live = np.arange(rho.shape[-1]) < np.asarray(step_dims)[..., None]
    return np.where(live, rho, 0.0)


def ensemble_numeraire(model, ens, clock: str = "calendar", decomposition=None):
    """Model-rate numéraire weights for a simulated ensemble.

    Returns ``(rho, rates)`` with ``rho`` of shape (P, J, W).
    """
    dec = decompose_returns(model, ens, "model") if decomposition is None else decomposition
    rates = local_rates(dec.dA, dec.dC, ens.grid.dt[None, :], clock)
    rho = assemble_numeraire(rates, ens.step_dims(), ens.epoch_index())
    return rho, rates


@dataclass
class StructuralReport:
    """Per-step structural-condition diagnostics."""

    step_residual: np.ndarray
    integrated_residual: np.ndarray
    in_range: np.ndarray
    growth: np.ndarray
    cumulative_growth: np.ndarray
    tol: float = RANGE_TOL

    @property
    def max_step_residual(self) -> float:
        return float(np.max(self.step_residual, initial=0.0))

    @property
    def max_integrated_residual(self) -> float:
        return float(np.max(self.integrated_residual, initial=0.0))

    @property
    def viable(self) -> bool:
        return bool(self.in_range.all())

    @property
    def is_numeraire_candidate(self) -> bool:
        return self.max_step_residual <= self.tol and self.max_integrated_residual <= self.tol

    def summary(self) -> dict:
        return {
            "viable": self.viable,
            "numeraire_candidate": self.is_numeraire_candidate,
            "max_step_residual": self.max_step_residual,
            "max_integrated_residual": self.max_integrated_residual,
            "n_out_of_range_steps": int((~self.in_range).sum()),
        }


def structural_residual(rates: RatesPath, rho, epochs=None) -> StructuralReport:
    """Check ``c rho = alpha`` stepwise and ``A_i = C_{i rho}`` per epoch.

    ``rates`` arrays have shape (..., J, W); ``epochs`` (..., J) restarts the
    integrated residual at each epoch, as the dissected processes do.
    """
    rho = np.asarray(rho, float)
    alpha, c, dO = rates.alpha, rates.c, rates.dO
    cr = np.einsum("...ij,...j->...i", c, rho)
    step_res = np.linalg.norm(cr - alpha, axis=-1)
    incr = (alpha - cr) * dO[..., None]
    if epochs is None:
        cum = np.cumsum(incr, axis=-2)
    else:
        cum = _cumsum_by_epoch(incr, np.asarray(epochs))
    integ = np.abs(cum).max(axis=-1)
    g, ok = max_growth(alpha, c)
    return StructuralReport(step_res, integ, ok, g, cumulative_growth(g, dO))


def _cumsum_by_epoch(incr, epochs):
    cum = np.cumsum(incr, axis=-2)
    before = cum - incr
    starts = np.ones(epochs.shape, bool)
    starts[..., 1:] = epochs[..., 1:] != epochs[..., :-1]
    idx = np.maximum.accumulate(np.where(starts, np.arange(epochs.shape[-1]), 0), axis=-1)
    return cum - np.take_along_axis(before, idx[..., None], axis=-2)


def orthogonal_increments(kind: str, shape, dt, scale: float, seed: int) -> np.ndarray:
    """Increments of a martingale driven by noise independent of the market.

    ``rademacher`` gives ``scale sqrt(dt) * (+-1)``; ``gaussian`` gives
    ``scale sqrt(dt) Z``.  Shape is (P, J).
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x4C])))
    sq = np.sqrt(np.asarray(dt, float))
    if kind == "rademacher":
        eps = rng.integers(0, 2, size=shape) * 2.0 - 1.0
    elif kind == "gaussian":
        eps = rng.standard_normal(shape)
    else:
        raise ValueError(f"unknown generator {kind!r}")
    return scale * sq * eps


def deflator(X_rho, dL=None) -> np.ndarray:
    """``Y = prod(1 + dL) / X_rho``; with ``dL=None`` this is ``1/X_rho``."""
    X_rho = np.asarray(X_rho, float)
    if np.any(X_rho <= 0):
        raise ValueError("numéraire wealth must stay positive")
    if dL is None:
        return 1.0 / X_rho
    dL = np.asarray(dL, float)
    if np.any(dL <= -1):
        raise ValueError("deflator driver needs increments > -1")
    EL = np.ones(X_rho.shape)
    np.cumprod(1.0 + dL, axis=-1, out=EL[..., 1:])
    return EL / X_rho


@dataclass
class BatteryRow:
    candidate: str
    checkpoint: float
    estimate: float
    se: float
    verdict: bool

    def as_dict(self):
        return {"candidate": self.candidate, "checkpoint": self.checkpoint,
                "estimate": self.estimate, "se": self.se,
                "verdict": "PASS" if self.verdict else "FAIL"}


@dataclass
class BatteryReport:
    name: str
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.verdict for r in self.rows)

    def as_dict(self):
        return {"battery": self.name, "verdict": "PASS" if self.passed else "FAIL",
                "rows": [r.as_dict() for r in self.rows]}


def log_optimality_battery(X_rho, candidates: dict, checkpoints, times, z: float = 3.0) -> BatteryReport:
    """Estimate ``E[log(X_pi / X_rho)(T)]``; PASS iff estimate <= z * SE.

    ``X_rho`` and each candidate are (P, J+1) wealth arrays; ``checkpoints``
    are grid indices.
    """
    rep = BatteryReport("log_optimality")
    for name, X_pi in candidates.items():
        for j in checkpoints:
            vals = np.log(X_pi[:, j]) - np.log(X_rho[:, j])
            est = mcstats.mean_with_se(vals, float(times[j]))
            rep.rows.append(BatteryRow(name, float(times[j]), est.mean, est.se,
                                       est.mean <= z * est.se))
    return rep


def supermartingale_battery(X_rho, candidates: dict, checkpoints, times, z: float = 3.0) -> BatteryReport:
    """Estimate ``E[X_pi/X_rho (T)]``; PASS iff estimate <= 1 + z * SE."""
    rep = BatteryReport("numeraire_supermartingale")
    for name, X_pi in candidates.items():
        for j in checkpoints:
            vals = X_pi[:, j] / X_rho[:, j]
            est = mcstats.mean_with_se(vals, float(times[j]))
            rep.rows.append(BatteryRow(name, float(times[j]), est.mean, est.se,
                                       est.mean <= 1.0 + z * est.se))
    return rep


def deflator_battery(Y, candidates: dict, checkpoints, times, z: float = 3.0) -> BatteryReport:
    """Two-sided test ``|E[Y X_pi (T)] - 1| <= z * SE``."""
    rep = BatteryReport("deflator_martingale")
    for name, X_pi in candidates.items():
        for j in checkpoints:
            est = mcstats.mean_with_se(Y[:, j] * X_pi[:, j], float(times[j]))
            rep.rows.append(BatteryRow(name, float(times[j]), est.mean, est.se,
                                       abs(est.mean - 1.0) <= z * est.se))
    return rep
