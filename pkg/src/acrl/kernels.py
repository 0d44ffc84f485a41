"""Hot inner loops, each in a numba flavour and a vectorised numpy flavour.

The public names at the bottom are bound once, according to
``acrl._accel.USE_NUMBA``. Both flavours are importable under their
``_nb`` / ``_np`` suffixes so the benchmark and the tests can pit them
against each other.

All membership kernels use the same boundary slack: ``lhs <= rhs`` passes
when ``lhs - rhs <= SLACK * max(1, |rhs|)``, a handful of ulps that absorbs
rounding of the left-hand side and nothing more.
"""

from __future__ import annotations

import numpy as np

from acrl._accel import njit, pick

SLACK = 4.0 * np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# membership, one row of ``A`` per candidate action


@njit
def _ball_rows_nb(A, radius_sq):
    n, d = A.shape
    out = np.empty(n, dtype=np.bool_)
    lim = radius_sq + SLACK * max(1.0, abs(radius_sq))
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += A[i, j] * A[i, j]
        out[i] = s <= lim
    return out


def _ball_rows_np(A, radius_sq):
    lim = radius_sq + SLACK * max(1.0, abs(radius_sq))
    return np.einsum("ij,ij->i", A, A) <= lim


@njit
def _box_rows_nb(A, lo, hi):
    n, d = A.shape
    out = np.ones(n, dtype=np.bool_)
    for i in range(n):
        for j in range(d):
            x = A[i, j]
            if x < lo[j] - SLACK * max(1.0, abs(lo[j])) or x > hi[j] + SLACK * max(1.0, abs(hi[j])):
                out[i] = False
                break
    return out


def _box_rows_np(A, lo, hi):
    lo_lim = lo - SLACK * np.maximum(1.0, np.abs(lo))
    hi_lim = hi + SLACK * np.maximum(1.0, np.abs(hi))
    return np.all((A >= lo_lim) & (A <= hi_lim), axis=1)


@njit
def _wabs_rows_nb(A, w, cap):
    n, d = A.shape
    out = np.empty(n, dtype=np.bool_)
    lim = cap + SLACK * max(1.0, abs(cap))
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += abs(w[j] * A[i, j])
        out[i] = s <= lim
    return out


def _wabs_rows_np(A, w, cap):
    lim = cap + SLACK * max(1.0, abs(cap))
    return np.abs(A * w).sum(axis=1) <= lim


@njit
def _ppos_rows_nb(A, w, cap):
    n, d = A.shape
    out = np.empty(n, dtype=np.bool_)
    lim = cap + SLACK * max(1.0, abs(cap))
    for i in range(n):
        s = 0.0
        for j in range(d):
            v = w[j] * A[i, j]
            if v > 0.0:
                s += v
        out[i] = s <= lim
    return out


def _ppos_rows_np(A, w, cap):
    lim = cap + SLACK * max(1.0, abs(cap))
    return np.maximum(A * w, 0.0).sum(axis=1) <= lim


@njit
def _band_rows_nb(A, total, band, per_cap):
    n, d = A.shape
    out = np.empty(n, dtype=np.bool_)
    band_lim = band + SLACK * max(1.0, abs(total))
    cap_lim = per_cap + SLACK * max(1.0, abs(per_cap))
    for i in range(n):
        s = 0.0
        ok = True
        for j in range(d):
            s += A[i, j]
            if A[i, j] > cap_lim:
                ok = False
        out[i] = ok and abs(s - total) <= band_lim
    return out


def _band_rows_np(A, total, band, per_cap):
    band_lim = band + SLACK * max(1.0, abs(total))
    cap_lim = per_cap + SLACK * max(1.0, abs(per_cap))
    return (np.abs(A.sum(axis=1) - total) <= band_lim) & np.all(A <= cap_lim, axis=1)


@njit
def _linear_rows_nb(A, G, h):
    n, d = A.shape
    m = G.shape[0]
    out = np.ones(n, dtype=np.bool_)
    for i in range(n):
        for k in range(m):
            s = 0.0
            for j in range(d):
                s += G[k, j] * A[i, j]
            if s > h[k] + SLACK * max(1.0, abs(h[k])):
                out[i] = False
                break
    return out


def _linear_rows_np(A, G, h):
    lim = h + SLACK * np.maximum(1.0, np.abs(h))
    return np.all(A @ G.T <= lim, axis=1)


# ---------------------------------------------------------------------------
# Dykstra over halfspaces {x : G_k x <= h_k} followed by the box [lo, hi]


@njit
def _dykstra_poly_nb(a, G, h, lo, hi, max_iter, tol):
    m, d = G.shape
    x = a.copy()
    incr = np.zeros((m + 1, d))
    gsq = np.empty(m)
    for k in range(m):
        gsq[k] = np.dot(G[k], G[k])
    z = np.empty(d)
    x_prev = np.empty(d)
    it = 0
    for it in range(1, max_iter + 1):
        x_prev[:] = x
        for k in range(m):
            for j in range(d):
                z[j] = x[j] + incr[k, j]
            viol = np.dot(G[k], z) - h[k]
            if viol > 0.0 and gsq[k] > 0.0:
                step = viol / gsq[k]
                for j in range(d):
                    x[j] = z[j] - step * G[k, j]
            else:
                x[:] = z
            for j in range(d):
                incr[k, j] = z[j] - x[j]
        for j in range(d):
            zj = x[j] + incr[m, j]
            xj = min(max(zj, lo[j]), hi[j])
            incr[m, j] = zj - xj
            x[j] = xj
        change = 0.0
        for j in range(d):
            change += (x[j] - x_prev[j]) ** 2
        if np.sqrt(change) < tol:
            break
    return x, it


def _dykstra_poly_np(a, G, h, lo, hi, max_iter, tol):
    m, d = G.shape
    x = np.array(a, dtype=np.float64, copy=True)
    incr = np.zeros((m + 1, d))
    gsq = np.einsum("ij,ij->i", G, G)
    it = 0
    for it in range(1, max_iter + 1):
        x_prev = x.copy()
        for k in range(m):
            z = x + incr[k]
            viol = G[k] @ z - h[k]
            x = z - (viol / gsq[k]) * G[k] if viol > 0.0 and gsq[k] > 0.0 else z
            incr[k] = z - x
        z = x + incr[m]
        x = np.clip(z, lo, hi)
        incr[m] = z - x
        if np.linalg.norm(x - x_prev) < tol:
            break
    return x, it


# ---------------------------------------------------------------------------
# tabular value iteration on Q(s, a) with an action mask


@njit
def _value_iteration_nb(P, R, mask, gamma, tol, max_iter):
    S, A = R.shape
    V = np.zeros(S)
    Q = np.zeros((S, A))
    deltas = np.zeros(max_iter)
    n = 0
    for it in range(max_iter):
        for s in range(S):
            for a in range(A):
                acc = 0.0
                for t in range(S):
                    acc += P[s, a, t] * V[t]
                Q[s, a] = R[s, a] + gamma * acc
        delta = 0.0
        for s in range(S):
            best = -np.inf
            for a in range(A):
                if mask[s, a] and Q[s, a] > best:
                    best = Q[s, a]
            delta = max(delta, abs(best - V[s]))
            V[s] = best
        deltas[it] = delta
        n = it + 1
        if delta < tol:
            break
    return V, Q, deltas[:n]


def _value_iteration_np(P, R, mask, gamma, tol, max_iter):
    S, A = R.shape
    V = np.zeros(S)
    Q = np.zeros((S, A))
    deltas = []
    for _ in range(max_iter):
        Q = R + gamma * (P @ V)
        V_new = np.where(mask, Q, -np.inf).max(axis=1)
        delta = float(np.abs(V_new - V).max())
        V = V_new
        deltas.append(delta)
        if delta < tol:
            break
    return V, Q, np.asarray(deltas)


ball_rows = pick(_ball_rows_nb, _ball_rows_np)
box_rows = pick(_box_rows_nb, _box_rows_np)
wabs_rows = pick(_wabs_rows_nb, _wabs_rows_np)
ppos_rows = pick(_ppos_rows_nb, _ppos_rows_np)
band_rows = pick(_band_rows_nb, _band_rows_np)
linear_rows = pick(_linear_rows_nb, _linear_rows_np)
dykstra_poly = pick(_dykstra_poly_nb, _dykstra_poly_np)
value_iteration = pick(_value_iteration_nb, _value_iteration_np)
