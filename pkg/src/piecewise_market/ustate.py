"""Paths with a stochastic number of components and their dissection calculus.

A path lives on a :class:`TimeGrid`.  At each grid time it holds a value in
the union of the spaces R^n; at reset times it additionally stores the
post-reset value ``X(t+)``, whose dimension is the dimension on the
following interval.  Integrands are predictable: the record at ``t_j`` is
used on the step ``(t_j, t_{j+1}]``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class StructuralError(ValueError):
    """Dimension bookkeeping is inconsistent."""


class UValue:
    """A point of the union of R^n, or the isolated identity element.

    ``UValue.identity()`` is neutral for addition and absorbing for
    multiplication.
    """

    __slots__ = ("_vec",)

    def __init__(self, vec=None):
        if vec is None:
            self._vec = None
        else:
            arr = np.atleast_1d(np.asarray(vec, dtype=float)).copy()
            if arr.ndim != 1 or arr.size == 0:
                raise StructuralError("a vector value needs dimension >= 1")
            arr.setflags(write=False)
            self._vec = arr

    @classmethod
    def identity(cls) -> "UValue":
        return cls(None)

    @property
    def is_identity(self) -> bool:
        return self._vec is None

    @property
    def vec(self) -> np.ndarray:
        if self._vec is None:
            raise StructuralError("the identity element has no coordinates")
        return self._vec

    @property
    def dim(self) -> int:
        if self._vec is None:
            raise StructuralError("dimension is undefined for the identity element")
        return self._vec.size

    def __add__(self, other):
        other = other if isinstance(other, UValue) else UValue(other)
        if self.is_identity:
            return other
        if other.is_identity:
            return self
        if self.dim != other.dim:
            raise StructuralError(f"cannot add dimensions {self.dim} and {other.dim}")
        return UValue(self._vec + other._vec)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, UValue):
            if self.is_identity or other.is_identity:
                return UValue.identity()
            if self.dim != other.dim:
                raise StructuralError(
                    f"cannot multiply dimensions {self.dim} and {other.dim}")
            return UValue(self._vec * other._vec)
        if self.is_identity:
            return self
        return UValue(self._vec * float(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, UValue):
            return NotImplemented
        if self.is_identity or other.is_identity:
            return self.is_identity and other.is_identity
        return self.dim == other.dim and bool(np.array_equal(self._vec, other._vec))

    def __hash__(self):
        return hash(None if self._vec is None else self._vec.tobytes())

    def __repr__(self):
        if self.is_identity:
            return "UValue(identity)"
        return f"UValue({self._vec.tolist()})"


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing times starting at 0."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).copy()
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a grid needs at least two times")
        if t[0] != 0.0:
            raise ValueError("grid must start at t=0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, horizon, steps + 1))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > tol:
            raise ValueError(f"time {t} is not on the grid")
        return j

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ValueError("factor must divide the number of steps")
        return TimeGrid(self.times[::factor])

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


def _pad(rows, width):
    out = np.full((len(rows), width), np.nan)
    for j, r in enumerate(rows):
        out[j, : len(r)] = r
    return out


@dataclass(frozen=True, eq=False)
class UPath:
    """A path in the union of R^n sampled on a grid.

    Parameters
    ----------
    grid : TimeGrid
    values : ndarray, shape (J+1, width)
        Pre-reset values, NaN-padded beyond ``dims[j]``.
    dims : ndarray of int, shape (J+1,)
        Dimension of the value stored at each grid time.
    post : dict
        Grid index -> right-limit vector ``X(t_j+)``, stored only where it
        differs from ``X(t_j)`` in value or dimension.
    """

    grid: TimeGrid
    values: np.ndarray
    dims: np.ndarray
    post: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        dims = np.asarray(self.dims, dtype=np.int64)
        J = self.grid.n_steps
        if vals.shape[0] != J + 1 or dims.shape != (J + 1,):
            raise StructuralError("values/dims must have one row per grid time")
        if np.any(dims < 1):
            raise StructuralError("dimensions must be >= 1")
        post = {int(j): np.asarray(v, dtype=float).reshape(-1) for j, v in self.post.items()}
        for j in post:
            if not 0 <= j <= J:
                raise StructuralError(f"post value at index {j} is off the grid")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "post", post)
        after = self.dims_after()
        if np.any(after[:-1] != dims[1:]):
            j = int(np.nonzero(after[:-1] != dims[1:])[0][0])
            raise StructuralError(
                f"dimension changes between t_{j} and t_{j + 1} without a stored reset value")

    @classmethod
    def from_vectors(cls, grid, vectors, post=None) -> "UPath":
        """Build from a list of per-time vectors (ragged allowed)."""
        rows = [np.atleast_1d(np.asarray(v, dtype=float)) for v in vectors]
        width = max(r.size for r in rows)
        return cls(grid, _pad(rows, width), np.array([r.size for r in rows]), dict(post or {}))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def value(self, j: int) -> np.ndarray:
        return self.values[j, : self.dims[j]]

    def right_limit(self, j: int) -> np.ndarray:
        if j in self.post:
            return self.post[j]
        return self.value(j)

    def dim_after(self, j: int) -> int:
        return int(self.post[j].size) if j in self.post else int(self.dims[j])

    def dims_after(self) -> np.ndarray:
        out = self.dims.copy()
        for j, v in self.post.items():
            out[j] = v.size
        return out

    def uvalue(self, j: int) -> UValue:
        return UValue(self.value(j))

    def step_left(self) -> np.ndarray:
        """``X(t_j+)`` for j < J, padded to the path width."""
        width = max([self.width] + [v.size for v in self.post.values()])
        out = np.full((self.grid.n_steps, width), np.nan)
        out[:, : self.width] = self.values[:-1]
        for j, v in self.post.items():
            if j < self.grid.n_steps:
                out[j, :] = np.nan
                out[j, : v.size] = v
        return out

    def step_right(self) -> np.ndarray:
        """``X(t_{j+1})`` for j < J."""
        return self.values[1:]

    def step_dims(self) -> np.ndarray:
        """Dimension on the step ``(t_j, t_{j+1}]``."""
        return self.dims[1:]

    def stopped(self, j_stop: int) -> "UPath":
        """The path stopped at grid index ``j_stop``."""
        vals = self.values.copy()
        dims = self.dims.copy()
        vals[j_stop + 1:] = vals[j_stop]
        dims[j_stop + 1:] = dims[j_stop]
        post = {j: v for j, v in self.post.items() if j < j_stop}
        return UPath(self.grid, vals, dims, post)


@dataclass(frozen=True, eq=False)
class Predictable:
    """A predictable integrand: ``steps[j]`` is used on ``(t_j, t_{j+1}]``."""

    grid: TimeGrid
    initial: np.ndarray
    steps: np.ndarray
    dims: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial", np.atleast_1d(np.asarray(self.initial, float)))
        object.__setattr__(self, "steps", np.asarray(self.steps, float))
        object.__setattr__(self, "dims", np.asarray(self.dims, np.int64))
        if self.steps.shape[0] != self.grid.n_steps or self.dims.shape != (self.grid.n_steps,):
            raise StructuralError("one integrand record per step is required")

    @classmethod
    def from_vectors(cls, grid, initial, vectors) -> "Predictable":
        rows = [np.atleast_1d(np.asarray(v, dtype=float)) for v in vectors]
        width = max(r.size for r in rows)
        return cls(grid, initial, _pad(rows, width), np.array([r.size for r in rows]))

    def step(self, j: int) -> np.ndarray:
        return self.steps[j, : self.dims[j]]

    @property
    def in_L0(self) -> bool:
        """True when the initial record is the zero vector."""
        return bool(np.all(self.initial == 0.0))


@dataclass(frozen=True)
class ResetSequence:
    """Grid indices of reset times; ``indices[0] == 0``.

    ``tau(k)`` returns None once the sequence is exhausted (tau = infinity).
    """

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx or idx[0] != 0:
            raise StructuralError("a reset sequence starts at index 0")
        if any(b < a for a, b in zip(idx, idx[1:])):
            raise StructuralError("reset indices must be nondecreasing")
        object.__setattr__(self, "indices", idx)

    def tau(self, k: int):
        return self.indices[k] if k < len(self.indices) else None

    @property
    def n_epochs(self) -> int:
        return len(self.indices)

    def epoch_of_step(self, j: int) -> int:
        """Epoch k whose interval ``(tau_{k-1}, tau_k]`` contains ``t_{j+1}``."""
        return bisect.bisect_right(self.indices, j)

    def refine(self, extra) -> "ResetSequence":
        return ResetSequence(tuple(sorted(set(self.indices) | {int(e) for e in extra})))


class DissectionKey(NamedTuple):
    k: int
    n: int


@dataclass(frozen=True, eq=False)
class FixedDimPath:
    """An R^n-valued path (or integrand) of one dissection piece."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[1]


def minimal_reset_sequence(X: UPath) -> ResetSequence:
    """Reset times where the right limit differs from the stored value."""
    idx = [0]
    for j in sorted(X.post):
        if j == 0:
            continue
        v = X.post[j]
        if v.size != X.dims[j] or not np.array_equal(v, X.value(j)):
            idx.append(j)
    return ResetSequence(tuple(idx))


def omega_membership(resets: ResetSequence, dims_after, k: int, n: int) -> bool:
    """Whether a path lies in the dissection set of (k, n)."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be >= 1")
    tau = resets.tau(k - 1)
    if tau is None:
        return False
    return int(np.asarray(dims_after)[tau]) == n


def membership_matrix(resets_list, dims_after, k_max: int, n_max: int) -> np.ndarray:
    """Boolean array ``(paths, k_max, n_max)``; entry [p, k-1, n-1]."""
    dims_after = np.asarray(dims_after)
    out = np.zeros((len(resets_list), k_max, n_max), dtype=bool)
    for p, rs in enumerate(resets_list):
        for k in range(1, min(k_max, rs.n_epochs) + 1):
            n = int(dims_after[p, rs.indices[k - 1]])
            if n <= n_max:
                out[p, k - 1, n - 1] = True
    return out


def _epoch_bounds(resets: ResetSequence, k: int, J: int):
    start = resets.indices[k - 1]
    end = resets.tau(k)
    return start, (J if end is None else end)


def dissect_integrator(X: UPath, resets: ResetSequence | None = None) -> dict:
    """Pieces ``X^{k,n}`` for the dissection sets containing this path.

    Pieces for other keys are identically zero and are not stored.
    """
    resets = minimal_reset_sequence(X) if resets is None else resets
    J = X.grid.n_steps
    out = {}
    for k in range(1, resets.n_epochs + 1):
        start, end = _epoch_bounds(resets, k, J)
        n = X.dim_after(start)
        base = X.right_limit(start)
        if base.size != n:
            raise StructuralError(f"post-reset vector at index {start} has wrong dimension")
        piece = np.zeros((J + 1, n))
        for j in range(start + 1, end + 1):
            if X.dims[j] != n:
                raise StructuralError(
                    f"dimension {X.dims[j]} at index {j} inside epoch {k} of dimension {n}")
            piece[j] = X.value(j) - base
        if end > start:
            piece[end + 1:] = piece[end]
        out[DissectionKey(k, n)] = FixedDimPath(X.grid, piece)
    return out


def dissect_integrand(H: Predictable, resets: ResetSequence, dims_after) -> dict:
    """Pieces ``H^{(k,n)}``: H on the epoch's steps, zero elsewhere."""
    dims_after = np.asarray(dims_after)
    J = H.grid.n_steps
    out = {}
    for k in range(1, resets.n_epochs + 1):
        start, end = _epoch_bounds(resets, k, J)
        n = int(dims_after[start])
        piece = np.zeros((J, n))
        for j in range(start, end):
            if H.dims[j] != n:
                raise StructuralError(
                    f"integrand dimension {H.dims[j]} on step {j} differs from {n}")
            piece[j] = H.step(j)
        out[DissectionKey(k, n)] = FixedDimPath(H.grid, piece)
    return out


def reassemble_integrand(pieces: dict, resets: ResetSequence, initial) -> Predictable:
    """Glue dissected integrands back into one predictable process."""
    any_piece = next(iter(pieces.values()))
    J = any_piece.values.shape[0]
    width = max(p.n for p in pieces.values())
    steps = np.full((J, width), np.nan)
    dims = np.zeros(J, np.int64)
    for key, piece in pieces.items():
        start, end = _epoch_bounds(resets, key.k, J)
        steps[start:end, : key.n] = piece.values[start:end]
        dims[start:end] = key.n
    return Predictable(any_piece.grid, initial, steps, dims)


def piecewise_integral(H: Predictable, X: UPath, resets: ResetSequence | None = None) -> np.ndarray:
    """``H . X`` on the grid, summed dissection by dissection.

    Returns an array of shape (J+1,).  The dimensional jump at a reset is
    never integrated.
    """
    resets = minimal_reset_sequence(X) if resets is None else resets
    x0 = X.value(0)
    if H.initial.size != x0.size:
        raise StructuralError("initial integrand and initial value differ in dimension")
    xs = dissect_integrator(X, resets)
    hs = dissect_integrand(H, resets, X.dims_after())
    incr = np.zeros(X.grid.n_steps)
    for key, xp in xs.items():
        hp = hs[key]
        incr += np.einsum("ji,ji->j", hp.values, np.diff(xp.values, axis=0))
    out = np.empty(X.grid.n_steps + 1)
    out[0] = float(H.initial @ x0)
    out[1:] = out[0] + np.cumsum(incr)
    return out
