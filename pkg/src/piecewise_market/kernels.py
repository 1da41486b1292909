"""Hot inner loops: path simulation, wealth products and rank assignment.

Every kernel has a numba version and a pure-numpy version with the same
signature.  ``simulate``, ``wealth_products`` and ``ranks`` dispatch on
``_jit.USE_NUMBA``; the explicit ``*_numba`` / ``*_numpy`` names are kept for
the benchmark and the equivalence tests.
"""

import math

import numpy as np

from . import _jit
from ._jit import njit

# event codes
NO_EVENT = 0
ENTRY = 1
EXIT = 2
SPLIT = 3
MERGE = 4

EVENT_CODES = {"entry": ENTRY, "exit": EXIT, "split": SPLIT, "merge": MERGE}

# dynamics codes
GBM = 0
MEAN_REVERTING = 1
ARITHMETIC = 2

# scheme codes
LOG_EULER = 0
EULER = 1

# IPO price laws
IPO_FIXED = 0
IPO_LOGNORMAL = 1
IPO_RELATIVE = 2

# columns of the per-step uniform draws
_U_TYPE = 0
_U_SCHED = 1
_U_RAND = 4
N_UNIFORMS = 8


def _apply_event(code, s, idv, n, next_id, u_a, u_b, u_c, z, ipo_code, ipo_a, ipo_b,
                 n_universe):
    """Apply one dimensional event in place; returns (n, next_id, changed).

    Survivors keep their relative order.  Events that would drop the
    dimension below one, or need a fresh asset id when the universe is
    exhausted, are suppressed.
    """
    if code == ENTRY:
        if next_id >= n_universe:
            return n, next_id, False
        if ipo_code == IPO_FIXED:
            price = ipo_a
        elif ipo_code == IPO_LOGNORMAL:
            price = math.exp(ipo_a + ipo_b * z)
        else:
            tot = 0.0
            for i in range(n):
                tot += s[i]
            price = ipo_a * (tot / n) * math.exp(ipo_b * z)
        s[n] = price
        idv[n] = next_id
        return n + 1, next_id + 1, True
    if code == EXIT:
        if n < 2:
            return n, next_id, False
        k = min(int(u_a * n), n - 1)
        for i in range(k, n - 1):
            s[i] = s[i + 1]
            idv[i] = idv[i + 1]
        s[n - 1] = np.nan
        idv[n - 1] = -1
        return n - 1, next_id, True
    if code == SPLIT:
        if next_id >= n_universe:
            return n, next_id, False
        k = 0
        for i in range(1, n):
            if s[i] > s[k]:
                k = i
        frac = 0.3 + 0.4 * u_b
        big = s[k]
        for i in range(n, k + 1, -1):
            s[i] = s[i - 1]
            idv[i] = idv[i - 1]
        s[k] = frac * big
        s[k + 1] = (1.0 - frac) * big
        idv[k + 1] = next_id
        return n + 1, next_id + 1, True
    if code == MERGE:
        if n < 2:
            return n, next_id, False
        a = min(int(u_a * n), n - 1)
        b = min(int(u_c * (n - 1)), n - 2)
        if b >= a:
            b += 1
        lo = min(a, b)
        hi = max(a, b)
        s[lo] = s[lo] + s[hi]
        for i in range(hi, n - 1):
            s[i] = s[i + 1]
            idv[i] = idv[i + 1]
        s[n - 1] = np.nan
        idv[n - 1] = -1
        return n - 1, next_id, True
    return n, next_id, False


def _advance(kind, scheme, s_i, a, kappa, theta, vii, dt, dw):
    if kind == ARITHMETIC:
        return s_i + a * dt + dw
    alpha = a
    if kind == MEAN_REVERTING:
        alpha = a + kappa * (theta - math.log(s_i))
    if scheme == LOG_EULER:
        return s_i * math.exp((alpha - 0.5 * vii) * dt + dw)
    return s_i * (1.0 + alpha * dt + dw)


_apply_event_jit = njit(cache=True)(_apply_event)
_advance_jit = njit(cache=True)(_advance)


@njit(cache=True)
def simulate_numba(kind, scheme, s0, ids0, drift, chol, kappa, theta, times, normals,
                   uniforms, ipo_z, sched, probs, ipo_code, ipo_a, ipo_b, width):
    n_paths, n_steps, n_univ = normals.shape
    n0 = s0.shape[0]
    prices = np.full((n_paths, n_steps + 1, width), np.nan)
    post = np.full((n_paths, n_steps + 1, width), np.nan)
    dims = np.zeros((n_paths, n_steps + 1), np.int64)
    dims_post = np.zeros((n_paths, n_steps + 1), np.int64)
    ids = np.full((n_paths, n_steps + 1, width), -1, np.int64)
    reset = np.zeros((n_paths, n_steps + 1), np.bool_)
    cov_diag = np.zeros(n_univ)
    for u in range(n_univ):
        acc = 0.0
        for k in range(n_univ):
            acc += chol[u, k] * chol[u, k]
        cov_diag[u] = acc
    p_total = probs[0] + probs[1] + probs[2] + probs[3]
    s = np.empty(width + 1)
    idv = np.empty(width + 1, np.int64)
    for p in range(n_paths):
        s[:] = np.nan
        idv[:] = -1
        for i in range(n0):
            s[i] = s0[i]
            idv[i] = ids0[i]
        n = n0
        next_id = n0
        for i in range(n):
            prices[p, 0, i] = s[i]
            post[p, 0, i] = s[i]
            ids[p, 0, i] = idv[i]
        dims[p, 0] = n
        dims_post[p, 0] = n
        reset[p, 0] = True
        for j in range(n_steps):
            dt = times[j + 1] - times[j]
            sq = math.sqrt(dt)
            for i in range(n):
                u = idv[i]
                dw = 0.0
                for k in range(n_univ):
                    dw += chol[u, k] * normals[p, j, k]
                s[i] = _advance_jit(kind, scheme, s[i], drift[u], kappa, theta[u],
                                    cov_diag[u], dt, dw * sq)
            jj = j + 1
            for i in range(n):
                prices[p, jj, i] = s[i]
            dims[p, jj] = n
            changed = False
            if jj < n_steps:
                code = sched[jj]
                if code != NO_EVENT:
                    n, next_id, ch = _apply_event_jit(
                        code, s, idv, n, next_id, uniforms[p, j, _U_SCHED],
                        uniforms[p, j, _U_SCHED + 1], uniforms[p, j, _U_SCHED + 2],
                        ipo_z[p, j, 0], ipo_code, ipo_a, ipo_b, n_univ)
                    changed = changed or ch
                if p_total > 0.0:
                    u0 = uniforms[p, j, _U_TYPE]
                    code = NO_EVENT
                    if u0 < probs[0]:
                        code = ENTRY
                    elif u0 < probs[0] + probs[1]:
                        code = EXIT
                    elif u0 < probs[0] + probs[1] + probs[2]:
                        code = SPLIT
                    elif u0 < p_total:
                        code = MERGE
                    if code != NO_EVENT:
                        n, next_id, ch = _apply_event_jit(
                            code, s, idv, n, next_id, uniforms[p, j, _U_RAND],
                            uniforms[p, j, _U_RAND + 1], uniforms[p, j, _U_RAND + 2],
                            ipo_z[p, j, 1], ipo_code, ipo_a, ipo_b, n_univ)
                        changed = changed or ch
            for i in range(n):
                post[p, jj, i] = s[i]
                ids[p, jj, i] = idv[i]
            dims_post[p, jj] = n
            reset[p, jj] = changed
    return prices, post, dims, dims_post, ids, reset


def simulate_numpy(kind, scheme, s0, ids0, drift, chol, kappa, theta, times, normals,
                   uniforms, ipo_z, sched, probs, ipo_code, ipo_a, ipo_b, width):
    n_paths, n_steps, n_univ = normals.shape
    n0 = s0.shape[0]
    prices = np.full((n_paths, n_steps + 1, width), np.nan)
    post = np.full((n_paths, n_steps + 1, width), np.nan)
    dims = np.zeros((n_paths, n_steps + 1), np.int64)
    dims_post = np.zeros((n_paths, n_steps + 1), np.int64)
    ids = np.full((n_paths, n_steps + 1, width), -1, np.int64)
    reset = np.zeros((n_paths, n_steps + 1), np.bool_)
    cov_diag = (chol * chol).sum(axis=1)

    s = np.full((n_paths, width + 1), np.nan)
    idv = np.full((n_paths, width + 1), -1, np.int64)
    s[:, :n0] = s0
    idv[:, :n0] = ids0
    n = np.full(n_paths, n0, np.int64)
    next_id = np.full(n_paths, n0, np.int64)
    prices[:, 0, :n0] = s0
    post[:, 0, :n0] = s0
    ids[:, 0, :n0] = ids0
    dims[:, 0] = n0
    dims_post[:, 0] = n0
    reset[:, 0] = True
    cum = np.cumsum(probs)
    p_total = cum[-1]
    cols = np.arange(width + 1)
    for j in range(n_steps):
        dt = times[j + 1] - times[j]
        sq = math.sqrt(dt)
        live = cols[None, :] < n[:, None]
        safe_ids = np.where(live, idv, 0)
        dw_all = normals[:, j, :] @ chol.T
        dw = np.take_along_axis(dw_all, safe_ids, axis=1) * sq
        a = drift[safe_ids]
        if kind == ARITHMETIC:
            new = s + a * dt + dw
        else:
            alpha = a
            if kind == MEAN_REVERTING:
                with np.errstate(invalid="ignore", divide="ignore"):
                    alpha = a + kappa * (theta[safe_ids] - np.log(s))
            if scheme == LOG_EULER:
                new = s * np.exp((alpha - 0.5 * cov_diag[safe_ids]) * dt + dw)
            else:
                new = s * (1.0 + alpha * dt + dw)
        s = np.where(live, new, np.nan)
        jj = j + 1
        prices[:, jj, :] = s[:, :width]
        dims[:, jj] = n
        changed = np.zeros(n_paths, np.bool_)
        if jj < n_steps:
            code = sched[jj]
            if code != NO_EVENT:
                for p in range(n_paths):
                    n[p], next_id[p], ch = _apply_event(
                        code, s[p], idv[p], n[p], next_id[p], uniforms[p, j, _U_SCHED],
                        uniforms[p, j, _U_SCHED + 1], uniforms[p, j, _U_SCHED + 2],
                        ipo_z[p, j, 0], ipo_code, ipo_a, ipo_b, n_univ)
                    changed[p] |= ch
            if p_total > 0.0:
                u0 = uniforms[:, j, _U_TYPE]
                codes = np.searchsorted(cum, u0, side="right") + 1
                for p in np.nonzero(u0 < p_total)[0]:
                    n[p], next_id[p], ch = _apply_event(
                        int(codes[p]), s[p], idv[p], n[p], next_id[p],
                        uniforms[p, j, _U_RAND], uniforms[p, j, _U_RAND + 1],
                        uniforms[p, j, _U_RAND + 2], ipo_z[p, j, 1], ipo_code, ipo_a,
                        ipo_b, n_univ)
                    changed[p] |= ch
        post[:, jj, :] = s[:, :width]
        ids[:, jj, :] = idv[:, :width]
        dims_post[:, jj] = n
        reset[:, jj] = changed
    return prices, post, dims, dims_post, ids, reset


@njit(cache=True)
def wealth_products_numba(weights, returns):
    n_paths, n_steps, width = returns.shape
    out = np.empty((n_paths, n_steps + 1))
    for p in range(n_paths):
        x = 1.0
        out[p, 0] = x
        for j in range(n_steps):
            acc = 0.0
            for i in range(width):
                acc += weights[p, j, i] * returns[p, j, i]
            x = x * (1.0 + acc)
            out[p, j + 1] = x
    return out


def wealth_products_numpy(weights, returns):
    factors = 1.0 + np.einsum("pji,pji->pj", weights, returns)
    out = np.empty((returns.shape[0], returns.shape[1] + 1))
    out[:, 0] = 1.0
    np.cumprod(factors, axis=1, out=out[:, 1:])
    return out


@njit(cache=True)
def ranks_numba(values, dims):
    n_paths, n_steps, width = values.shape
    out = np.full((n_paths, n_steps, width), width + 1, np.int64)
    for p in range(n_paths):
        for j in range(n_steps):
            n = dims[p, j]
            for i in range(n):
                r = 1
                v = values[p, j, i]
                for k in range(n):
                    w = values[p, j, k]
                    if w > v or (w == v and k < i):
                        r += 1
                out[p, j, i] = r
    return out


def ranks_numpy(values, dims):
    width = values.shape[-1]
    live = np.arange(width) < dims[..., None]
    keyed = np.where(live, -values, np.inf)
    order = np.argsort(keyed, axis=-1, kind="stable")
    out = np.empty(values.shape, np.int64)
    np.put_along_axis(out, order, np.arange(1, width + 1), axis=-1)
    return np.where(live, out, width + 1)


def simulate(*args):
    if _jit.USE_NUMBA:
        return simulate_numba(*args)
    return simulate_numpy(*args)


def wealth_products(weights, returns):
    """Discrete stochastic exponential prod(1 + w.dR) for each path."""
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    returns = np.ascontiguousarray(returns, dtype=np.float64)
    if _jit.USE_NUMBA:
        return wealth_products_numba(weights, returns)
    return wealth_products_numpy(weights, returns)


def ranks(values, dims):
    """1-based capitalization ranks; ties go to the smaller index.

    Padding slots (index >= dims) get rank ``width + 1``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    if _jit.USE_NUMBA:
        return ranks_numba(values, dims)
    return ranks_numpy(values, dims)
