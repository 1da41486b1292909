"""Market models with dimensional events, simulation and local rates."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .ustate import ResetSequence, StructuralError, TimeGrid, UPath

PSD_TOL = 1e-10


class ModelError(ValueError):
    """The model specification is invalid."""


class DomainError(ValueError):
    """A price left the strictly positive domain.

    Attributes ``path``, ``step`` and ``component`` locate the offending value.
    """

    def __init__(self, msg, path=None, step=None, component=None):
        super().__init__(msg)
        self.path = path
        self.step = step
        self.component = component


def psd_factor(cov, tol=PSD_TOL):
    """Symmetric factor L with L L^T = cov after clipping tiny negative eigenvalues."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ModelError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
        raise ModelError("covariance is not symmetric")
    lam, q = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam.size and lam.min() < -tol * scale:
        raise ModelError(f"covariance has eigenvalue {lam.min():.3e} below -{tol}")
    lam = np.clip(lam, 0.0, None)
    return q * np.sqrt(lam)


@dataclass
class EventLaw:
    """Law of dimensional events.

    ``scheduled`` is a list of ``(time, kind)`` pairs with kind one of
    ``entry``, ``exit``, ``split``, ``merge``.  The per-step probabilities
    apply at every interior grid time.  IPO prices follow ``ipo``:
    ``fixed`` (price ``ipo_a``), ``lognormal`` (``exp(ipo_a + ipo_b Z)``)
    or ``relative`` (``ipo_a`` times the mean live price times ``exp(ipo_b Z)``).
    """

    scheduled: list = field(default_factory=list)
    p_entry: float = 0.0
    p_exit: float = 0.0
    p_split: float = 0.0
    p_merge: float = 0.0
    ipo: str = "fixed"
    ipo_a: float = 1.0
    ipo_b: float = 0.0

    def __post_init__(self):
        probs = self.probs
        if np.any(probs < 0) or probs.sum() > 1:
            raise ModelError("event probabilities must be nonnegative and sum to <= 1")
        if self.ipo not in ("fixed", "lognormal", "relative"):
            raise ModelError(f"unknown IPO law {self.ipo!r}")
        for t, kind in self.scheduled:
            if kind not in kernels.EVENT_CODES:
                raise ModelError(f"unknown event kind {kind!r}")

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p_entry, self.p_exit, self.p_split, self.p_merge], dtype=float)

    @property
    def any_events(self) -> bool:
        return bool(self.scheduled) or self.probs.sum() > 0

    def schedule(self, grid: TimeGrid) -> np.ndarray:
        codes = np.zeros(grid.n_steps + 1, np.int64)
        for t, kind in self.scheduled:
            j = grid.index_of(float(t), tol=1e-9)
            if not 0 < j < grid.n_steps:
                raise ModelError(f"scheduled event at t={t} must be an interior grid time")
            if codes[j]:
                raise ModelError(f"two scheduled events at t={t}")
            codes[j] = kernels.EVENT_CODES[kind]
        return codes

    @property
    def ipo_code(self) -> int:
        return {"fixed": kernels.IPO_FIXED, "lognormal": kernels.IPO_LOGNORMAL,
                "relative": kernels.IPO_RELATIVE}[self.ipo]


_KINDS = {"gbm": kernels.GBM, "mean_reverting": kernels.MEAN_REVERTING,
          "constant": kernels.ARITHMETIC}
_SCHEMES = {"log": kernels.LOG_EULER, "euler": kernels.EULER}


@dataclass
class MarketModel:
    """Itô dynamics for a universe of potential assets.

    Assets are identified by integer ids ``0 .. U-1``; the first
    ``len(initial_prices)`` are live at time 0 and new entries or split-offs
    take the next unused id.

    Parameters
    ----------
    kind : {"gbm", "mean_reverting", "constant"}
        ``gbm``: dS = S (a dt + L dW).  ``mean_reverting``: the drift is
        ``a + kappa (theta - log S)``.  ``constant``: arithmetic dynamics
        dS = a dt + L dW, which need not stay positive.
    scheme : {"log", "euler"}
        Log-Euler keeps prices positive; plain Euler matches the textbook
        multiplicative step.
    """

    initial_prices: np.ndarray
    drift: np.ndarray
    cov: np.ndarray
    kind: str = "gbm"
    scheme: str = "log"
    kappa: float = 0.0
    theta: np.ndarray | None = None
    events: EventLaw = field(default_factory=EventLaw)

    def __post_init__(self):
        self.initial_prices = np.atleast_1d(np.asarray(self.initial_prices, float))
        self.drift = np.atleast_1d(np.asarray(self.drift, float))
        self.cov = np.atleast_2d(np.asarray(self.cov, float))
        U = self.drift.size
        if self.cov.shape != (U, U):
            raise ModelError(f"cov must be {U}x{U}")
        if not 1 <= self.initial_prices.size <= U:
            raise ModelError("need between 1 and U initial prices")
        if self.kind not in _KINDS:
            raise ModelError(f"unknown dynamics {self.kind!r}")
        if self.scheme not in _SCHEMES:
            raise ModelError(f"unknown scheme {self.scheme!r}")
        if self.kind == "constant" and self.scheme == "log":
            self.scheme = "euler"
        self.theta = np.zeros(U) if self.theta is None else np.atleast_1d(np.asarray(self.theta, float))
        if self.theta.shape != (U,):
            raise ModelError("theta must have one entry per universe asset")
        if self.kind != "constant" and np.any(self.initial_prices <= 0):
            raise ModelError("multiplicative models need positive initial prices")
        self.chol = psd_factor(self.cov)

    @property
    def universe(self) -> int:
        return self.drift.size

    def model_id(self) -> str:
        payload = {
            "kind": self.kind, "scheme": self.scheme,
            "initial_prices": self.initial_prices.tolist(), "drift": self.drift.tolist(),
            "cov": self.cov.tolist(), "kappa": self.kappa, "theta": self.theta.tolist(),
            "events": asdict(self.events),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def return_rates(self, s, ids):
        """Local return rates ``(alpha, c)`` in calendar time.

        ``s`` and ``ids`` are arrays (..., W); padding ids are negative and
        yield zero rows/columns.
        """
        s = np.asarray(s, float)
        ids = np.asarray(ids)
        live = ids >= 0
        safe = np.where(live, ids, 0)
        a = self.drift[safe]
        if self.kind == "mean_reverting":
            with np.errstate(invalid="ignore", divide="ignore"):
                a = a + self.kappa * (self.theta[safe] - np.log(np.where(live, s, 1.0)))
        c = self.cov[safe[..., :, None], safe[..., None, :]]
        if self.kind == "constant":
            sl = np.where(live, s, 1.0)
            a = a / sl
            c = c / (sl[..., :, None] * sl[..., None, :])
        a = np.where(live, a, 0.0)
        c = np.where(live[..., :, None] & live[..., None, :], c, 0.0)
        return a, c


def _path_streams(seed, p0, p1):
    for p in range(p0, p1):
        yield np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), p])))


def draw_marks(seed, p0, p1, n_steps, universe, with_events):
    """Per-path random marks; stream of path p is SeedSequence([seed, p])."""
    n = p1 - p0
    normals = np.empty((n, n_steps, universe))
    uniforms = np.zeros((n, n_steps, kernels.N_UNIFORMS))
    ipo_z = np.zeros((n, n_steps, 2))
    for i, rng in enumerate(_path_streams(seed, p0, p1)):
        normals[i] = rng.standard_normal((n_steps, universe))
        if with_events:
            uniforms[i] = rng.random((n_steps, kernels.N_UNIFORMS))
            ipo_z[i] = rng.standard_normal((n_steps, 2))
    return normals, uniforms, ipo_z


@dataclass(eq=False)
class Ensemble:
    """Simulated paths in dense padded form.

    ``prices[p, j]`` is the pre-reset value at ``t_j`` and ``post[p, j]`` the
    right limit; they differ only where ``reset[p, j]`` is set (index 0 is
    always flagged as the initial reset).  ``ids`` follow the post layout.
    """

    grid: TimeGrid
    prices: np.ndarray
    post: np.ndarray
    dims: np.ndarray
    dims_post: np.ndarray
    ids: np.ndarray
    reset: np.ndarray
    seed: int = 0
    model_id: str = ""

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def width(self) -> int:
        return self.prices.shape[2]

    def subset(self, idx) -> "Ensemble":
        return Ensemble(self.grid, self.prices[idx], self.post[idx], self.dims[idx],
                        self.dims_post[idx], self.ids[idx], self.reset[idx], self.seed,
                        self.model_id)

    def resets(self, p: int) -> ResetSequence:
        return ResetSequence(tuple(np.nonzero(self.reset[p])[0].tolist()))

    def path(self, p: int) -> UPath:
        post = {int(j): self.post[p, j, : self.dims_post[p, j]]
                for j in np.nonzero(self.reset[p])[0] if j > 0}
        return UPath(self.grid, self.prices[p], self.dims[p], post)

    def step_left(self) -> np.ndarray:
        return self.post[:, :-1]

    def step_right(self) -> np.ndarray:
        return self.prices[:, 1:]

    def step_dims(self) -> np.ndarray:
        return self.dims[:, 1:]

    def step_ids(self) -> np.ndarray:
        return self.ids[:, :-1]

    def step_live(self) -> np.ndarray:
        return np.arange(self.width) < self.step_dims()[..., None]

    def epoch_index(self) -> np.ndarray:
        """Epoch k (1-based) of every step, shape (P, J)."""
        return np.cumsum(self.reset[:, :-1], axis=1)

    def returns(self) -> np.ndarray:
        """Step returns ``(S(t_{j+1}) - S(t_j+)) / S(t_j+)``, zero on padding."""
        left = self.step_left()
        live = self.step_live()
        bad = live & ~(left > 0)
        if bad.any():
            p, j, i = (int(x) for x in np.argwhere(bad)[0])
            raise DomainError(f"nonpositive price on path {p}, step {j}, component {i}",
                              path=p, step=j, component=i)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (self.step_right() - left) / left
        return np.where(live, r, 0.0)


def simulate_paths(model: MarketModel, grid: TimeGrid, n_paths: int, seed: int,
                   chunk: int = 4096) -> Ensemble:
    """Simulate an ensemble; bitwise deterministic in ``seed``."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    ev = model.events
    sched = ev.schedule(grid)
    width = model.universe
    ids0 = np.arange(model.initial_prices.size, dtype=np.int64)
    with_events = ev.any_events
    parts = []
    for p0 in range(0, n_paths, chunk):
        p1 = min(n_paths, p0 + chunk)
        normals, uniforms, ipo_z = draw_marks(seed, p0, p1, grid.n_steps, width, with_events)
        parts.append(kernels.simulate(
            _KINDS[model.kind], _SCHEMES[model.scheme], model.initial_prices, ids0,
            model.drift, model.chol, float(model.kappa), model.theta,
            np.asarray(grid.times), normals, uniforms, ipo_z, sched, ev.probs,
            ev.ipo_code, float(ev.ipo_a), float(ev.ipo_b), width))
    arrays = [np.concatenate(a, axis=0) for a in zip(*parts)]
    return Ensemble(grid, *arrays, seed=int(seed), model_id=model.model_id())


def return_process(S: UPath, resets: ResetSequence | None = None) -> UPath:
    """Cumulative returns, restarting at zero in every epoch.

    The value at a reset time is the return accumulated over the ending
    epoch; its right limit is the zero vector of the new dimension.
    """
    from .ustate import minimal_reset_sequence

    resets = minimal_reset_sequence(S) if resets is None else resets
    J = S.grid.n_steps
    starts = set(resets.indices)
    vals = np.full_like(S.values, np.nan)
    post = {}
    acc = np.zeros(S.dims[0])
    vals[0, : S.dims[0]] = 0.0
    for j in range(J):
        left = S.right_limit(j)
        if j in starts:
            acc = np.zeros(S.dim_after(j))
            if j > 0:
                post[j] = acc.copy()
        if np.any(left <= 0):
            i = int(np.nonzero(left <= 0)[0][0])
            raise DomainError(f"nonpositive price at step {j}, component {i}", step=j, component=i)
        right = S.value(j + 1)
        if right.size != left.size:
            raise StructuralError(f"dimension change inside step {j}")
        acc = acc + (right - left) / left
        vals[j + 1, : acc.size] = acc
    return UPath(S.grid, vals, S.dims, post)


@dataclass(eq=False)
class ReturnDecomposition:
    """Step increments of the drift part, martingale part and covariation."""

    dA: np.ndarray
    dM: np.ndarray
    dC: np.ndarray
    mode: str

    @property
    def dR(self):
        return self.dA + self.dM


def decompose_returns(model: MarketModel, ens: Ensemble, mode: str = "model",
                      dR: np.ndarray | None = None) -> ReturnDecomposition:
    """Split step returns into ``dA = alpha dt`` and ``dM = dR - dA``.

    ``mode="model"`` accumulates covariation at the model rate;
    ``mode="realized"`` uses ``dM dM^T``.
    """
    if mode not in ("model", "realized"):
        raise ValueError("mode must be 'model' or 'realized'")
    dR = ens.returns() if dR is None else dR
    alpha, c = model.return_rates(ens.step_left(), np.where(ens.step_live(), ens.step_ids(), -1))
    dt = ens.grid.dt[None, :, None]
    dA = alpha * dt
    dM = dR - dA
    if mode == "model":
        dC = c * dt[..., None]
    else:
        dC = dM[..., :, None] * dM[..., None, :]
    return ReturnDecomposition(dA, dM, dC, mode)


def covariation(P, Q) -> np.ndarray:
    """Realized covariation ``sum dP dQ`` along the last axis, starting at 0."""
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    prod = np.diff(P, axis=-1) * np.diff(Q, axis=-1)
    out = np.zeros(P.shape)
    np.cumsum(prod, axis=-1, out=out[..., 1:])
    return out


@dataclass(eq=False)
class RatesPath:
    """Per-step local rates under an operational clock."""

    alpha: np.ndarray
    c: np.ndarray
    dO: np.ndarray
    clock: str


def local_rates(dA, dC, dt, clock: str = "calendar") -> RatesPath:
    """Rates ``alpha = dA/dO``, ``c = dC/dO`` with ``0/0 := 0``.

    ``calendar`` uses ``dO = dt``; ``paper`` uses
    ``dO = sum_i |dA_i| + dC_ii``.
    """
    dA = np.asarray(dA, float)
    dC = np.asarray(dC, float)
    if clock == "calendar":
        dO = np.broadcast_to(np.asarray(dt, float), dA.shape[:-1]).copy()
    elif clock == "paper":
        dO = np.abs(dA).sum(axis=-1) + np.einsum("...ii->...", dC)
    else:
        raise ValueError(f"unknown clock {clock!r}")
    pos = dO > 0
    inv = np.where(pos, 1.0 / np.where(pos, dO, 1.0), 0.0)
    return RatesPath(dA * inv[..., None], dC * inv[..., None, None], dO, clock)


@dataclass
class IntegrabilityReport:
    finite: bool
    value: float


def integrability_report(nu, alpha, c, dO, horizon_steps=None) -> IntegrabilityReport:
    """``sum (|nu.alpha| + nu^T c nu) dO`` over the steps before the horizon.

    Rates may be supplied per step (arrays with a leading step axis) or as
    closed-form constants per epoch together with the epoch's clock mass;
    infinite inputs produce a non-finite report instead of an overflow.
    """
    nu = np.asarray(nu, float)
    alpha = np.asarray(alpha, float)
    c = np.asarray(c, float)
    dO = np.atleast_1d(np.asarray(dO, float))
    if alpha.ndim == 1:
        alpha = np.broadcast_to(alpha, dO.shape + alpha.shape)
        c = np.broadcast_to(c, dO.shape + c.shape)
    if nu.ndim == 1:
        nu = np.broadcast_to(nu, alpha.shape)
    if horizon_steps is not None:
        alpha, c, dO, nu = alpha[:horizon_steps], c[:horizon_steps], dO[:horizon_steps], nu[:horizon_steps]
    with np.errstate(invalid="ignore"):
        dens = np.abs(np.einsum("ji,ji->j", nu, alpha)) + np.einsum("ji,jik,jk->j", nu, c, nu)
        terms = np.where(dO == 0, 0.0, dens * dO)
    if not np.all(np.isfinite(terms)):
        return IntegrabilityReport(False, float("inf"))
    return IntegrabilityReport(True, float(terms.sum()))
