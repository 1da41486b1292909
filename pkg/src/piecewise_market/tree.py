"""Exact computations on finite event trees.

Every node stores the asset prices observed there; at a reset node the
post-reset vector (possibly of another dimension) is what is traded on the
edges to its children.  All one-step problems are small (a handful of
children, at most four assets) and are solved by exact dense linear algebra
and vertex enumeration.

One-step deflator ratios ``y`` are handled through ``q = p * y``, which
ranges over the polytope ``{q >= 0, sum q = 1, sum q dS = 0}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np

TOL = 1e-11


class TreeError(ValueError):
    """The tree description is inconsistent."""


class NA1Error(ValueError):
    """Some node admits an arbitrage of the first kind.

    ``node`` is the node id and ``theta`` the one-step strategy.
    """

    def __init__(self, msg, node=None, theta=None):
        super().__init__(msg)
        self.node = node
        self.theta = theta


# ---------------------------------------------------------------- linear algebra


def row_basis(G, tol=TOL):
    """Orthonormal basis ``V`` (n x d) of the row space of G."""
    G = np.atleast_2d(np.asarray(G, float))
    if G.size == 0:
        return np.zeros((G.shape[1], 0))
    _, s, vt = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0:
        return np.zeros((G.shape[1], 0))
    d = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[:d].T


def _rank(M, tol=TOL):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))


def polytope_vertices(G, tol=TOL):
    """Vertices of ``{q >= 0, sum q = 1, G^T q = 0}`` for G of shape (r, n)."""
    G = np.atleast_2d(np.asarray(G, float))
    r = G.shape[0]
    A = np.vstack([np.ones(r), G.T])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    rk = _rank(A, tol)
    verts = []
    for s in range(1, rk + 1):
        for S in combinations(range(r), s):
            AS = A[:, S]
            if _rank(AS, tol) < s:
                continue
            qS, *_ = np.linalg.lstsq(AS, b, rcond=None)
            if np.linalg.norm(AS @ qS - b) > 1e3 * tol or qS.min() <= tol:
                continue
            q = np.zeros(r)
            q[list(S)] = qS
            if not any(np.allclose(q, v, atol=1e-12) for v in verts):
                verts.append(q)
    return verts


def analytic_center(verts, G, tol=TOL):
    """Maximizer of ``sum log q`` over the relative interior of the polytope.

    Requires the vertex supports to cover every index.  Newton's method in
    the null-space parametrization, started at the vertex barycenter.
    """
    G = np.atleast_2d(np.asarray(G, float))
    r = G.shape[0]
    q = np.mean(verts, axis=0)
    A = np.vstack([np.ones(r), G.T])
    _, s, vt = np.linalg.svd(A)
    rk = int(np.sum(s > tol * max(1.0, s[0])))
    N = vt[rk:].T
    if N.shape[1] == 0:
        return q
    for _ in range(100):
        grad = N.T @ (1.0 / q)
        H = N.T @ ((1.0 / q ** 2)[:, None] * N)
        step = np.linalg.solve(H, grad)
        dq = N @ step
        t = 1.0
        while np.any(q + t * dq <= 0):
            t *= 0.5
        q_new = q + 0.99 * t * dq if t < 1.0 else q + dq
        if np.linalg.norm(q_new - q) < 1e-15:
            q = q_new
            break
        q = q_new
    return q


def farkas_certificate(G, tol=TOL):
    """A strategy theta with ``G theta >= 0`` and ``G theta != 0``, or None.

    Extreme rays of the pointed cone ``{w : G V w >= 0}`` (V a row-space
    basis) are null directions of subsets of ``d - 1`` rows.  The result is
    scaled so that its largest payoff is 1.
    """
    G = np.atleast_2d(np.asarray(G, float))
    V = row_basis(G, tol)
    d = V.shape[1]
    if d == 0:
        return None
    Gp = G @ V
    scale = max(1.0, np.abs(Gp).max())
    best = None
    for S in combinations(range(G.shape[0]), d - 1):
        if d > 1:
            sub = Gp[list(S)]
            if _rank(sub, tol) < d - 1:
                continue
            _, _, vt = np.linalg.svd(sub)
            w = vt[-1]
        else:
            w = np.ones(1)
        for sgn in (1.0, -1.0):
            pay = Gp @ (sgn * w)
            if pay.min() >= -tol * scale and pay.max() > 1e3 * tol * scale:
                theta = V @ (sgn * w) / pay.max()
                if best is None or np.sum(G @ theta > 0) > np.sum(G @ best > 0):
                    best = theta
    return best


def one_step_superhedge(G, values, tol=TOL):
    """``min v`` subject to ``v + G theta >= values``.

    Returns ``(v, theta)``.  Raises NA1Error when the problem is unbounded
    below or degenerate (which happens only at non-viable nodes).
    """
    G = np.atleast_2d(np.asarray(G, float))
    values = np.asarray(values, float)
    r, n = G.shape
    V = row_basis(G, tol)
    M = np.hstack([np.ones((r, 1)), G @ V])
    d = M.shape[1]
    if _rank(M, tol) < d:
        raise NA1Error("constant payoff is attainable from zero capital")
    scale = max(1.0, np.abs(values).max(initial=0.0))
    best = None
    for S in combinations(range(r), d):
        MS = M[list(S)]
        if _rank(MS, tol) < d:
            continue
        sol = np.linalg.solve(MS, values[list(S)])
        if np.all(M @ sol >= values - 1e3 * tol * scale):
            if best is None or sol[0] < best[0] - 1e-13 * scale:
                best = sol
    if best is None:
        raise NA1Error("one-step superhedging problem is unbounded")
    return float(best[0]), V @ best[1:] if d > 1 else np.zeros(n)


def one_step_dual(verts, values, tol=1e-10):
    """``max q . values`` over the vertices and whether the sup is attained at q > 0.

    Returns ``(value, optimal_vertices, attained)``.
    """
    vals = np.array([float(q @ values) for q in verts])
    best = vals.max()
    scale = max(1.0, abs(best))
    opt = [q for q, v in zip(verts, vals) if v >= best - tol * scale]
    cover = np.any(np.array(opt) > 0, axis=0)
    return float(best), opt, bool(cover.all())


# ---------------------------------------------------------------- tree container


@dataclass
class Node:
    id: str
    parent: int | None
    prob: float
    prices: np.ndarray
    reset: bool = False
    post_prices: np.ndarray | None = None
    depth: int = 0
    children: list = field(default_factory=list)

    @property
    def traded(self) -> np.ndarray:
        """Prices traded on the edges to the children."""
        return self.post_prices if self.reset else self.prices


@dataclass
class OneStep:
    """Deflator set of one node in ``q = p y`` coordinates.

    ``status`` is ``empty`` (no strictly positive ratio exists),
    ``singleton`` or ``multi``.  ``particular`` is the analytic center
    mapped to ratios ``y`` and ``null_basis`` spans the admissible ratio
    directions.
    """

    node: str
    p: np.ndarray
    G: np.ndarray
    vertices: list
    status: str
    particular: np.ndarray | None
    null_basis: np.ndarray
    center_q: np.ndarray | None
    witness: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.null_basis.shape[1]

    def as_dict(self):
        return {
            "node": self.node, "status": self.status, "dimension": self.dimension,
            "particular": None if self.particular is None else self.particular.tolist(),
            "null_basis": self.null_basis.T.tolist(),
            "vertices_y": [(q / self.p).tolist() for q in self.vertices],
            "witness_theta": None if self.witness is None else self.witness.tolist(),
        }


class EventTree:
    """A finite probability tree carrying asset prices.

    Build with :meth:`from_nodes` / :meth:`from_json`; node records are
    dicts with ``id``, ``parent`` (None for the root), ``prob`` (conditional
    on the parent), ``prices``, optional ``reset`` and ``post_prices``.
    A ``dim`` entry, when present, must equal ``len(prices)``.
    """

    def __init__(self, nodes):
        self.nodes = nodes
        self.index = {nd.id: i for i, nd in enumerate(nodes)}
        self._validate()

    @classmethod
    def from_nodes(cls, records) -> "EventTree":
        ids = [str(r["id"]) for r in records]
        if len(set(ids)) != len(ids):
            raise TreeError("duplicate node ids")
        pos = {i: k for k, i in enumerate(ids)}
        raw = []
        for r in records:
            prices = np.atleast_1d(np.asarray(r["prices"], float))
            if "dim" in r and int(r["dim"]) != prices.size:
                raise TreeError(f"node {r['id']}: dim does not match prices")
            reset = bool(r.get("reset", False))
            post = r.get("post_prices")
            if reset and post is None:
                raise TreeError(f"node {r['id']}: reset without post_prices")
            post = None if post is None else np.atleast_1d(np.asarray(post, float))
            parent = r.get("parent")
            if parent is not None and str(parent) not in pos:
                raise TreeError(f"node {r['id']}: unknown parent {parent}")
            raw.append((str(r["id"]), None if parent is None else str(parent),
                        float(r.get("prob", 1.0)), prices, reset, post))
        roots = [x for x in raw if x[1] is None]
        if len(roots) != 1:
            raise TreeError("a tree needs exactly one root")
        # order nodes breadth first
        kids = {i: [] for i in ids}
        for x in raw:
            if x[1] is not None:
                kids[x[1]].append(x[0])
        order = [roots[0][0]]
        for nid in order:
            order.extend(kids[nid])
        if len(order) != len(ids):
            raise TreeError("tree is not connected")
        byid = {x[0]: x for x in raw}
        new_pos = {nid: k for k, nid in enumerate(order)}
        nodes = []
        for nid in order:
            _, par, prob, prices, reset, post = byid[nid]
            nodes.append(Node(nid, None if par is None else new_pos[par], prob, prices,
                              reset, post))
        for k, nd in enumerate(nodes):
            if nd.parent is not None:
                nodes[nd.parent].children.append(k)
                nd.depth = nodes[nd.parent].depth + 1
        return cls(nodes)

    @classmethod
    def from_json(cls, payload) -> "EventTree":
        if isinstance(payload, (str, Path)):
            payload = json.loads(Path(payload).read_text())
        return cls.from_nodes(payload["nodes"])

    def to_json(self) -> dict:
        out = []
        for nd in self.nodes:
            rec = {"id": nd.id, "parent": None if nd.parent is None else self.nodes[nd.parent].id,
                   "prob": nd.prob, "dim": int(nd.prices.size), "prices": nd.prices.tolist(),
                   "reset": nd.reset}
            if nd.reset:
                rec["post_prices"] = nd.post_prices.tolist()
            out.append(rec)
        return {"nodes": out}

    def _validate(self):
        for nd in self.nodes:
            if nd.children:
                ps = np.array([self.nodes[c].prob for c in nd.children])
                if np.any(ps <= 0) or abs(ps.sum() - 1.0) > 1e-12:
                    raise TreeError(f"node {nd.id}: child probabilities must be positive and sum to 1")
                n = nd.traded.size
                for c in nd.children:
                    if self.nodes[c].prices.size != n:
                        raise TreeError(
                            f"node {self.nodes[c].id}: dimension {self.nodes[c].prices.size} "
                            f"differs from traded dimension {n} at its parent")

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self) -> int:
        return 0

    @property
    def horizon(self) -> int:
        return max(nd.depth for nd in self.nodes)

    def ids(self):
        return [nd.id for nd in self.nodes]

    def leaves(self):
        return [k for k, nd in enumerate(self.nodes) if not nd.children]

    def internal(self):
        return [k for k, nd in enumerate(self.nodes) if nd.children]

    def at_depth(self, d):
        return [k for k, nd in enumerate(self.nodes) if nd.depth == d]

    def path_prob(self) -> np.ndarray:
        out = np.ones(len(self))
        for k, nd in enumerate(self.nodes):
            if nd.parent is not None:
                out[k] = out[nd.parent] * nd.prob
        return out

    def step(self, k):
        """``(p, G)``: child probabilities and price increments at node k."""
        nd = self.nodes[k]
        p = np.array([self.nodes[c].prob for c in nd.children])
        G = np.array([self.nodes[c].prices - nd.traded for c in nd.children])
        return p, G.reshape(len(nd.children), nd.traded.size)

    def edge_epoch(self) -> np.ndarray:
        """Epoch of the edge into each node (root gets 0).

        Epoch 1 starts at the root; each reset node opens a new epoch for
        the edges leaving it.
        """
        out = np.zeros(len(self), np.int64)
        start = np.zeros(len(self), np.int64)
        start[0] = 1
        for k, nd in enumerate(self.nodes):
            if nd.parent is not None:
                out[k] = start[nd.parent]
                start[k] = out[k] + (1 if nd.reset else 0)
            elif nd.reset:
                start[k] = 2
        return out

    def as_values(self, mapping, default=None) -> np.ndarray:
        """Node-indexed array from an id -> value mapping."""
        out = np.full(len(self), np.nan if default is None else float(default))
        for key, v in mapping.items():
            out[self.index[str(key)]] = float(v)
        if np.any(np.isnan(out)):
            missing = [self.nodes[k].id for k in np.nonzero(np.isnan(out))[0]]
            raise TreeError(f"no value for nodes {missing[:5]}")
        return out

    def to_mapping(self, values) -> dict:
        return {nd.id: float(v) for nd, v in zip(self.nodes, values)}

    @cached_property
    def one_steps(self) -> dict:
        return {k: _one_step(self, k) for k in self.internal()}

    def one_step(self, k) -> OneStep:
        return self.one_steps[k]


def _one_step(tree, k) -> OneStep:
    p, G = tree.step(k)
    r = p.size
    verts = polytope_vertices(G)
    A = np.vstack([np.ones(r), G.T])
    _, s, vt = np.linalg.svd(A)
    rk = int(np.sum(s > TOL * max(1.0, s[0])))
    N = vt[rk:].T
    null_y = N / p[:, None]
    node = tree.nodes[k].id
    cover = np.any(np.array(verts) > 0, axis=0) if verts else np.zeros(r, bool)
    if not verts or not cover.all():
        theta = farkas_certificate(G)
        return OneStep(node, p, G, verts, "empty", None, null_y, None, theta)
    center = analytic_center(verts, G)
    status = "singleton" if N.shape[1] == 0 else "multi"
    return OneStep(node, p, G, verts, status, center / p, null_y, center)


def one_step_deflator_set(tree: EventTree, node) -> OneStep:
    k = tree.index[str(node)] if not isinstance(node, (int, np.integer)) else int(node)
    if not tree.nodes[k].children:
        raise TreeError("a leaf has no one-step deflator set")
    return tree.one_step(k)


# ---------------------------------------------------------------- viability


@dataclass
class NA1Report:
    viable: bool
    node: str | None = None
    theta: np.ndarray | None = None
    payoff: np.ndarray | None = None
    expected_payoff: float | None = None

    def as_dict(self):
        return {"viable": self.viable, "node": self.node,
                "theta": None if self.theta is None else self.theta.tolist(),
                "payoff": None if self.payoff is None else self.payoff.tolist(),
                "expected_payoff": self.expected_payoff}


def na1_probe(tree: EventTree) -> NA1Report:
    """Viable iff every node has a strictly positive one-step deflator ratio."""
    for k in tree.internal():
        os_ = tree.one_step(k)
        if os_.status == "empty":
            pay = os_.G @ os_.witness
            return NA1Report(False, os_.node, os_.witness, pay, float(os_.p @ pay))
    return NA1Report(True)


def _require_viable(tree):
    rep = na1_probe(tree)
    if not rep.viable:
        raise NA1Error(f"arbitrage of the first kind at node {rep.node}", rep.node, rep.theta)


# ---------------------------------------------------------------- deflators


def sample_deflators(tree: EventTree, count: int, seed: int = 0):
    """Deflators built from one-step ratios in each node's polytope.

    The first sample uses the analytic center at every node; the others mix
    a Dirichlet combination of vertices with the center, so every ratio is
    strictly positive.  Deterministic in ``seed``.
    """
    _require_viable(tree)
    rng = np.random.default_rng(seed)
    out = []
    for s in range(count):
        Y = np.ones(len(tree))
        for k in tree.internal():
            os_ = tree.one_step(k)
            if s == 0 or os_.status == "singleton":
                q = os_.center_q
            else:
                lam = rng.dirichlet(np.ones(len(os_.vertices)))
                eps = rng.uniform(0.02, 0.5)
                q = (1 - eps) * (lam @ np.array(os_.vertices)) + eps * os_.center_q
            y = q / os_.p
            for c, yc in zip(tree.nodes[k].children, y):
                Y[c] = Y[k] * yc
        out.append(Y)
    return out


def deflator_residual(tree: EventTree, Y) -> float:
    """Largest violation of the one-step deflator conditions."""
    Y = np.asarray(Y, float)
    worst = abs(Y[0] - 1.0)
    for k in tree.internal():
        p, G = tree.step(k)
        y = Y[tree.nodes[k].children] / Y[k]
        worst = max(worst, abs(p @ y - 1.0), float(np.abs((p * y) @ G).max(initial=0.0)))
    return worst


def is_deflator(tree: EventTree, Y, tol: float = 1e-12) -> bool:
    Y = np.asarray(Y, float)
    return bool(np.all(Y > 0)) and deflator_residual(tree, Y) <= tol


@dataclass
class MartingaleCheck:
    ok: bool
    worst_node: str | None
    residual: float


def _drift(tree, Z):
    Z = np.asarray(Z, float)
    res = {}
    for k in tree.internal():
        p, _ = tree.step(k)
        res[k] = float(p @ Z[tree.nodes[k].children] - Z[k])
    return res


def is_martingale(tree: EventTree, Z, tol: float = 1e-10) -> MartingaleCheck:
    res = _drift(tree, Z)
    if not res:
        return MartingaleCheck(True, None, 0.0)
    k = max(res, key=lambda i: abs(res[i]))
    scale = max(1.0, float(np.abs(Z).max()))
    return MartingaleCheck(abs(res[k]) <= tol * scale, tree.nodes[k].id, abs(res[k]))


def is_supermartingale(tree: EventTree, Z, tol: float = 1e-10) -> MartingaleCheck:
    res = _drift(tree, Z)
    if not res:
        return MartingaleCheck(True, None, 0.0)
    k = max(res, key=lambda i: res[i])
    scale = max(1.0, float(np.abs(Z).max()))
    return MartingaleCheck(res[k] <= tol * scale, tree.nodes[k].id, res[k])


# ---------------------------------------------------------------- wealth


def strategy_wealth(tree: EventTree, x: float, theta: dict) -> np.ndarray:
    """``X = x + theta . S`` with ``theta[k]`` held on the edges out of node k."""
    X = np.empty(len(tree))
    X[0] = x
    for k, nd in enumerate(tree.nodes):
        if nd.parent is not None:
            par = tree.nodes[nd.parent]
            X[k] = X[nd.parent] + float(np.asarray(theta[nd.parent]) @ (nd.prices - par.traded))
    return X


# ---------------------------------------------------------------- optional decomposition


@dataclass
class Decomposition:
    """``X = X(root) + theta . S - K`` with K nondecreasing and ``K(root) = 0``.

    ``dK[k]`` is the withdrawal on the edge into node k (recorded at k).
    ``node_slack[k] = X(k) - v*(k)`` where ``v*(k)`` is the cheapest
    one-step superhedge of the children's values.
    """

    theta: dict
    dK: np.ndarray
    K: np.ndarray
    node_slack: np.ndarray
    reconstruction_error: float


@dataclass
class Rejection:
    """``X`` fails to be a supermartingale under the deflator ratio ``y`` at ``node``."""

    node: str
    y: np.ndarray
    excess: float


def optional_decompose(tree: EventTree, X, tol: float = 1e-10):
    """Decompose X or return a :class:`Rejection` witness."""
    _require_viable(tree)
    X = np.asarray(X, float)
    theta = {}
    dK = np.zeros(len(tree))
    slack = np.zeros(len(tree))
    scale = max(1.0, float(np.abs(X).max()))
    for k in tree.internal():
        kids = tree.nodes[k].children
        os_ = tree.one_step(k)
        v, th = one_step_superhedge(os_.G, X[kids])
        if X[k] < v - tol * scale:
            return _rejection(tree, k, X)
        theta[k] = th
        slack[k] = X[k] - v
        dK[kids] = np.maximum(X[k] + os_.G @ th - X[kids], 0.0)
    K = np.zeros(len(tree))
    for k, nd in enumerate(tree.nodes):
        if nd.parent is not None:
            K[k] = K[nd.parent] + dK[k]
    for k in tree.leaves():
        theta.setdefault(k, np.zeros(tree.nodes[k].traded.size))
    recon = strategy_wealth(tree, X[0], theta) - K
    return Decomposition(theta, dK, K, slack, float(np.abs(recon - X).max()))


def _rejection(tree, k, X):
    os_ = tree.one_step(k)
    vals = X[tree.nodes[k].children]
    best, opt, _ = one_step_dual(os_.vertices, vals)
    c_val = float(os_.center_q @ vals)
    gap = best - X[k]
    eps = 0.5 if c_val >= X[k] else min(0.5, 0.5 * gap / (best - c_val))
    q = (1 - eps) * opt[0] + eps * os_.center_q
    return Rejection(os_.node, q / os_.p, float(q @ vals - X[k]))


def verify_rejection(tree: EventTree, X, rej: Rejection, tol: float = 1e-12) -> bool:
    """The witness ratio is a valid one-step deflator ratio that X violates."""
    k = tree.index[rej.node]
    p, G = tree.step(k)
    y = rej.y
    ok_defl = (np.all(y > 0) and abs(p @ y - 1) <= tol
               and np.abs((p * y) @ G).max(initial=0.0) <= tol * max(1.0, np.abs(G).max()))
    X = np.asarray(X, float)
    return bool(ok_defl and p @ (y * X[tree.nodes[k].children]) > X[k])


# ---------------------------------------------------------------- superhedging


@dataclass
class Superhedge:
    x: float
    theta: dict
    value: np.ndarray

    def as_dict(self, tree):
        return {"x": self.x, "theta": {tree.nodes[k].id: np.asarray(t).tolist()
                                       for k, t in self.theta.items()},
                "value": tree.to_mapping(self.value)}


def superhedge(tree: EventTree, dK) -> Superhedge:
    """Smallest initial capital financing the withdrawal stream ``dK``.

    ``V(leaf) = dK(leaf)``; ``V(k) = dK(k) + min{v : v + theta . dS >= V(child)}``.
    """
    _require_viable(tree)
    dK = np.asarray(dK, float)
    if np.any(dK < 0):
        raise ValueError("withdrawals must be nonnegative")
    V = dK.copy()
    theta = {}
    for k in reversed(range(len(tree))):
        kids = tree.nodes[k].children
        if kids:
            v, th = one_step_superhedge(tree.one_step(k).G, V[kids])
            V[k] = dK[k] + v
            theta[k] = th
    return Superhedge(float(V[0]), theta, V)


@dataclass
class DualValue:
    value: float
    attained: bool
    node_values: np.ndarray
    not_attained_at: list


def dual_value(tree: EventTree, dK) -> DualValue:
    """``sup_Y E[sum Y dK]`` by backward recursion over vertex sets."""
    _require_viable(tree)
    dK = np.asarray(dK, float)
    D = dK.copy()
    missing = []
    for k in reversed(range(len(tree))):
        kids = tree.nodes[k].children
        if kids:
            best, _, att = one_step_dual(tree.one_step(k).vertices, D[kids])
            D[k] = dK[k] + best
            if not att:
                missing.append(tree.nodes[k].id)
    return DualValue(float(D[0]), not missing, D, sorted(missing))


def minimal_financing(tree: EventTree, dK) -> np.ndarray:
    """``K(node)`` plus the value of withdrawals strictly after the node."""
    dK = np.asarray(dK, float)
    D = dual_value(tree, dK).node_values
    K = np.zeros(len(tree))
    for k, nd in enumerate(tree.nodes):
        K[k] = dK[k] + (K[nd.parent] if nd.parent is not None else 0.0)
    return K + D - dK


def finances(tree: EventTree, X, dK, tol: float = 1e-10) -> bool:
    """Whether the wealth X stays above cumulative withdrawals."""
    dK = np.asarray(dK, float)
    K = np.zeros(len(tree))
    for k, nd in enumerate(tree.nodes):
        K[k] = dK[k] + (K[nd.parent] if nd.parent is not None else 0.0)
    return bool(np.all(np.asarray(X) >= K - tol))


# ---------------------------------------------------------------- claims and completeness


def claim_stream(tree: EventTree, payoff) -> np.ndarray:
    """Withdrawal stream paying ``payoff`` at the maturity (leaf) nodes."""
    payoff = np.asarray(payoff, float)
    T = tree.horizon
    leaves = tree.leaves()
    if any(tree.nodes[k].depth != T for k in leaves):
        raise TreeError("claims need every leaf at the horizon")
    dK = np.zeros(len(tree))
    if payoff.shape == (len(tree),):
        dK[leaves] = payoff[leaves]
    else:
        dK[leaves] = payoff
    if np.any(dK < 0):
        raise ValueError("claims must be nonnegative")
    return dK


@dataclass
class Replication:
    replicable: bool
    dK: np.ndarray
    x: float


def replicable(tree: EventTree, payoff, tol: float = 1e-10) -> Replication:
    """Superhedge the claim, then decompose the minimal value process."""
    dK = claim_stream(tree, payoff)
    sh = superhedge(tree, dK)
    V = sh.value.copy()
    dec = optional_decompose(tree, V)
    if isinstance(dec, Rejection):
        raise RuntimeError("minimal superhedging value failed to decompose")
    scale = max(1.0, float(np.abs(V).max()))
    return Replication(bool(dec.dK.max(initial=0.0) <= tol * scale), dec.dK, sh.x)


def is_complete(tree: EventTree) -> bool:
    """Viable and every one-step deflator set is a single point."""
    _require_viable(tree)
    return all(tree.one_step(k).status == "singleton" for k in tree.internal())


def indicator_claims_replicable(tree: EventTree) -> bool:
    """Every Arrow claim on a maturity node is replicable."""
    leaves = tree.leaves()
    for k in leaves:
        pay = np.zeros(len(leaves))
        pay[leaves.index(k)] = 1.0
        if not replicable(tree, pay).replicable:
            return False
    return True


# ---------------------------------------------------------------- log-optimal wealth


def log_optimal_step(p, G, tol: float = 1e-13, max_iter: int = 200):
    """Maximize ``sum p log(1 + h . dS)`` over shares-per-unit-wealth h.

    Bisection on the derivative for one traded direction, damped Newton
    otherwise.  Directions with ``G h = 0`` are irrelevant and fixed at 0.
    """
    p = np.asarray(p, float)
    G = np.atleast_2d(np.asarray(G, float))
    V = row_basis(G)
    d = V.shape[1]
    if d == 0:
        return np.zeros(G.shape[1])
    Gp = G @ V
    if d == 1:
        g = Gp[:, 0]
        pos, neg = g[g > 0], g[g < 0]
        if pos.size == 0 or neg.size == 0:
            raise NA1Error("log-optimal problem is unbounded")
        if g.size == 2:
            # two outcomes: the first-order condition is linear in z
            return V[:, 0] * (-(p @ g) / (g[0] * g[1]))
        lo, hi = -1.0 / pos.max(), -1.0 / neg.min()

        def deriv(z):
            return float(np.sum(p * g / (1 + z * g)))

        a, b = lo, hi
        for _ in range(400):
            mid = 0.5 * (a + b)
            if deriv(mid) > 0:
                a = mid
            else:
                b = mid
            if b - a <= tol * max(1.0, abs(mid)):
                break
        return V[:, 0] * 0.5 * (a + b)
    z = np.zeros(d)
    f = 0.0
    for _ in range(max_iter):
        w = 1 + Gp @ z
        grad = Gp.T @ (p / w)
        H = -(Gp.T * (p / w ** 2)) @ Gp
        step = -np.linalg.solve(H, grad)
        if float(grad @ step) < 1e-28:
            break
        t = 1.0
        while True:
            wn = 1 + Gp @ (z + t * step)
            if np.all(wn > 0):
                fn = float(p @ np.log(wn))
                if fn >= f + 1e-4 * t * float(grad @ step):
                    break
            t *= 0.5
            if t < 1e-20:
                break
        z = z + t * step
        f = float(p @ np.log(1 + Gp @ z))
    return V @ z


@dataclass
class NumeraireTree:
    """Supermartingale numéraire wealth and its ingredients.

    ``h[k]`` are shares per unit wealth held out of node k; ``weights[k]``
    the corresponding fractions of wealth (where prices are nonzero);
    ``epoch_factor[e]`` the wealth growth accumulated within epoch ``e``
    along the path to each node.
    """

    X: np.ndarray
    h: dict
    weights: dict
    epoch: np.ndarray
    epoch_factor: dict


def supermartingale_numeraire_tree(tree: EventTree) -> NumeraireTree:
    """One-step log-optimal growth per node, glued multiplicatively."""
    _require_viable(tree)
    X = np.ones(len(tree))
    h = {}
    weights = {}
    epoch = tree.edge_epoch()
    n_ep = int(epoch.max(initial=0))
    factors = {e: np.ones(len(tree)) for e in range(1, n_ep + 1)}
    for k in tree.internal():
        p, G = tree.step(k)
        hk = log_optimal_step(p, G)
        h[k] = hk
        S = tree.nodes[k].traded
        with np.errstate(divide="ignore", invalid="ignore"):
            weights[k] = np.where(S != 0, hk * S, np.nan)
        for c, inc in zip(tree.nodes[k].children, G @ hk):
            X[c] = X[k] * (1 + inc)
            for e in factors:
                factors[e][c] = factors[e][k] * ((1 + inc) if epoch[c] == e else 1.0)
    return NumeraireTree(X, h, weights, epoch, factors)


# ---------------------------------------------------------------- random trees


def random_tree(seed: int, max_depth: int = 4, max_children: int = 4, max_assets: int = 2,
                max_nodes: int = 60, reset_prob: float = 0.2, viable: bool = True,
                integer_grid: bool = False) -> EventTree:
    """A random tree with every leaf at the horizon.

    Viable trees get increments re-centred under a strictly positive
    measure.  With ``integer_grid`` the increments are small integers and
    are left as drawn, so viability is not guaranteed; this is meant for
    brute-force arbitrage searches.
    """
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, max_depth + 1))
    depth = min(depth, max_nodes - 1)
    n0 = int(rng.integers(1, max_assets + 1))
    records = [{"id": "0", "parent": None, "prob": 1.0,
                "prices": (10 + rng.integers(0, 5, n0)).astype(float).tolist()}]
    traded = {"0": np.array(records[0]["prices"])}
    frontier = ["0"]
    count = 1
    for d in range(depth):
        left = depth - d
        nxt = []
        for i, nid in enumerate(frontier):
            # keep room for at least a single chain below every open node
            reserve = (len(frontier) - i - 1) * left + len(nxt) * (left - 1)
            budget = (max_nodes - count - reserve) // left
            r = int(rng.integers(1, max(1, min(max_children, budget)) + 1))
            S = traded[nid]
            n = S.size
            if integer_grid:
                dS = rng.integers(-2, 3, size=(r, n)).astype(float)
            else:
                dS = rng.normal(0, 1, size=(r, n))
                if viable:
                    w = rng.uniform(0.2, 1.0, r)
                    dS = dS - (w @ dS) / w.sum()
            probs = rng.dirichlet(np.ones(r) * 2.0)
            for c in range(r):
                cid = f"{nid}.{c}"
                prices = S + dS[c]
                rec = {"id": cid, "parent": nid, "prob": float(probs[c]),
                       "prices": prices.tolist()}
                if d < depth - 1 and rng.random() < reset_prob:
                    m = int(rng.integers(1, max_assets + 1))
                    post = (5 + rng.integers(0, 10, m)).astype(float)
                    rec["reset"] = True
                    rec["post_prices"] = post.tolist()
                    traded[cid] = post
                else:
                    traded[cid] = prices
                records.append(rec)
                nxt.append(cid)
                count += 1
        frontier = nxt
    kids = {}
    for rec in records[1:]:
        kids.setdefault(rec["parent"], []).append(rec)
    for group in kids.values():
        tot = math.fsum(r["prob"] for r in group)
        for r in group:
            r["prob"] /= tot
        group[-1]["prob"] = 1.0 - math.fsum(r["prob"] for r in group[:-1])
    return EventTree.from_nodes(records)
