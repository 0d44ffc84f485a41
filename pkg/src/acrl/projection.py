"""Euclidean projection onto feasible action sets (the QP-Solver).

``project`` is the entry point used by the rest of the package: it picks a
closed form when one exists and falls back to Dykstra's alternating
projections otherwise. Every public projection call bumps
:data:`QP_COUNTER` exactly once; internal helpers never do.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import optimize

from acrl import kernels
from acrl.constraints import (
    Ball,
    Box,
    ConstraintSpec,
    DimensionMismatch,
    LinearSystem,
    PositivePartSum,
    SignedSumBand,
    TableMask,
    WeightedAbsSum,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
FEAS_TOL = 1e-8


class QpCounter:
    """Process-wide count of projection calls."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def bump(self) -> None:
        with self._lock:
            self._count += 1

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


QP_COUNTER = QpCounter()


class NoConvergence(RuntimeError):
    def __init__(self, report: "ProjectionReport"):
        super().__init__(f"projection residual {report.residual:.3g} after {report.iterations} iterations")
        self.report = report


@dataclass(frozen=True, eq=False)
class ProjectionReport:
    projected: np.ndarray
    moved: bool
    iterations: int
    residual: float


# ---------------------------------------------------------------------------
# closed forms (uncounted)


def _ball(a: np.ndarray, radius_sq: float) -> np.ndarray:
    n2 = float(a @ a)
    if n2 <= radius_sq:
        return a.copy()
    return a * (np.sqrt(radius_sq) / np.sqrt(n2))


def _halfspace(a: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    viol = float(w @ a) - b
    if viol <= 0.0:
        return a.copy()
    return a - (viol / float(w @ w)) * w


def _weighted_l1(a: np.ndarray, w: np.ndarray, cap: float) -> np.ndarray:
    w = np.abs(w)
    y = np.abs(a)
    if float(w @ y) <= cap:
        return a.copy()
    active = w > 0
    t = np.zeros_like(y)
    t[active] = y[active] / w[active]
    order = np.argsort(-t[active], kind="stable")
    ta, wa, ya = t[active][order], w[active][order], y[active][order]
    s1 = np.cumsum(wa * ya)
    s2 = np.cumsum(wa * wa)
    nxt = np.append(ta[1:], 0.0)
    theta = 0.0
    for k in range(ta.shape[0]):
        th = (s1[k] - cap) / s2[k]
        if th >= nxt[k]:
            theta = th
            break
    theta = max(theta, 0.0)
    out = a.copy()
    out[active] = np.sign(a[active]) * np.maximum(y[active] - theta * w[active], 0.0)
    return out


def _box_slab(a: np.ndarray, lo: np.ndarray, hi: np.ndarray, s_lo: float, s_hi: float) -> np.ndarray:
    """Nearest point of ``{lo <= x <= hi, s_lo <= sum(x) <= s_hi}``."""
    x = np.clip(a, lo, hi)
    s = x.sum()
    if s_lo <= s <= s_hi:
        return x
    target = s_hi if s > s_hi else s_lo
    # g(t) = sum(clip(a - t, lo, hi)) is piecewise linear and non-increasing;
    # past the finite knots it keeps sloping down through unbounded coordinates
    knots = np.unique(np.concatenate([a - hi, a - lo]))
    knots = knots[np.isfinite(knots)]
    g = np.array([np.clip(a - k, lo, hi).sum() for k in knots])
    if target >= g[0]:
        n_free = int(np.count_nonzero(np.isinf(hi)))
        t = knots[0] if n_free == 0 else knots[0] - (target - g[0]) / n_free
    elif target <= g[-1]:
        n_free = int(np.count_nonzero(np.isinf(lo)))
        t = knots[-1] if n_free == 0 else knots[-1] + (g[-1] - target) / n_free
    else:
        j = int(np.searchsorted(-g, -target, side="left"))
        k0, k1, g0, g1 = knots[j - 1], knots[j], g[j - 1], g[j]
        t = k0 if g0 == g1 else k0 + (g0 - target) * (k1 - k0) / (g0 - g1)
    return np.clip(a - t, lo, hi)


# ---------------------------------------------------------------------------
# decomposition of specs into closed-form pieces


@dataclass
class _Pieces:
    dim: int
    G: list
    h: list
    lo: np.ndarray
    hi: np.ndarray
    other: list  # (project, residual) callables for non-polyhedral pieces
    ppos: list  # PositivePartSum sets, handled by orthant enumeration

    @property
    def polyhedral(self) -> bool:
        return not self.other

    def halfspaces(self):
        if not self.G:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.ascontiguousarray(np.array(self.G, dtype=np.float64)), np.array(self.h, dtype=np.float64)


def _spec_dim(spec) -> Optional[int]:
    return getattr(spec, "dim", None)


def _decompose(sets: Sequence[ConstraintSpec], dim: int, state=None) -> _Pieces:
    p = _Pieces(dim, [], [], np.full(dim, -np.inf), np.full(dim, np.inf), [], [])
    for spec in sets:
        d = _spec_dim(spec)
        if d is not None and d != dim:
            raise DimensionMismatch(f"constraint of dimension {d} applied to {dim}-vector")
        if isinstance(spec, Box):
            p.lo = np.maximum(p.lo, spec.lo)
            p.hi = np.minimum(p.hi, spec.hi)
        elif isinstance(spec, LinearSystem):
            p.G.extend(spec.A)
            p.h.extend(spec.b)
        elif isinstance(spec, SignedSumBand):
            ones = np.ones(dim)
            p.G.extend([ones, -ones])
            p.h.extend([spec.total + spec.band, -(spec.total - spec.band)])
            p.hi = np.minimum(p.hi, spec.per_cap)
        elif isinstance(spec, Ball):
            r2 = spec.radius_sq
            p.other.append((lambda z, r2=r2: _ball(z, r2), lambda z, r2=r2: max(0.0, float(z @ z) - r2)))
        elif isinstance(spec, WeightedAbsSum):
            w, cap = spec.weights_at(state), spec.cap
            p.other.append(
                (lambda z, w=w, cap=cap: _weighted_l1(z, w, cap), lambda z, w=w, cap=cap: max(0.0, float(np.abs(w * z).sum()) - cap))
            )
        elif isinstance(spec, PositivePartSum):
            p.ppos.append((spec.weights_at(state), spec.cap))
        elif isinstance(spec, TableMask):
            raise TypeError("discrete TableMask sets have no Euclidean projection")
        else:
            raise TypeError(f"unsupported constraint {type(spec).__name__}")
    if np.any(p.lo > p.hi):
        raise ValueError("empty box intersection")
    return p


def _poly_residual(G, h, lo, hi, x) -> float:
    r = 0.0
    if G.shape[0]:
        r = max(r, float(np.max(G @ x - h)))
    r = max(r, float(np.max(lo - x)), float(np.max(x - hi)))
    return max(r, 0.0)


def _active_set_polish(a, G, h, lo, hi, x, rounds: int = 50):
    """Exact KKT point near the Dykstra iterate.

    Dykstra converges slowly on polyhedra, so its iterate is used only to
    guess the active set; the projection onto that face is solved in closed
    form and the set is repaired (drop negative multipliers, add violated
    rows) until the KKT conditions hold. Falls back to ``x`` if they never do.
    """
    dim = a.shape[0]
    eye = np.eye(dim)
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    C = np.vstack([G, -eye[fin_lo], eye[fin_hi]])
    d = np.concatenate([h, -lo[fin_lo], hi[fin_hi]])
    if C.shape[0] == 0:
        return x
    scale = np.maximum(1.0, np.abs(d))
    active = C @ x - d >= -1e-7 * scale
    for _ in range(rounds):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            cand, mu = a.copy(), np.zeros(0)
        else:
            Ca = C[idx]
            mu = np.linalg.lstsq(Ca @ Ca.T, Ca @ a - d[idx], rcond=None)[0]
            cand = a - Ca.T @ mu
        if mu.size and mu.min() < -1e-12:
            active[idx[np.argmin(mu)]] = False
            continue
        viol = C @ cand - d
        worst = int(np.argmax(viol))
        if viol[worst] > 1e-12 * scale[worst]:
            if active[worst]:
                break
            active[worst] = True
            continue
        return cand
    return _least_distance(a, C, d, x)


def _least_distance(a, C, d, x):
    """Exact projection onto ``{z : C z <= d}`` as a least-distance program.

    With ``z = a + u`` the problem is ``min |u|`` subject to ``-C u >= C a - d``;
    Lawson and Hanson reduce that to one NNLS solve. Returns ``x`` when the
    reduction reports an empty set.
    """
    G, g = -C, C @ a - d
    E = np.vstack([G.T, g[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    v, _ = optimize.nnls(E, f, maxiter=50 * E.shape[1])
    r = E @ v - f
    if abs(r[-1]) < 1e-14:
        return x
    return a - r[:-1] / r[-1]


def _run_pieces(a: np.ndarray, p: _Pieces, max_iter: int, tol: float):
    """Dykstra over the pieces plus one final clamp pass; returns (x, iters, residual)."""
    G, h = p.halfspaces()
    if p.polyhedral:
        x, it = kernels.dykstra_poly(a.astype(np.float64), G, h, p.lo, p.hi, max_iter, tol)
        x = _active_set_polish(a, G, h, p.lo, p.hi, x)
    else:
        projs: List[Callable] = [lambda z, g=g, b=b: _halfspace(z, g, b) for g, b in zip(G, h)]
        projs.append(lambda z: np.clip(z, p.lo, p.hi))
        projs.extend(f for f, _ in p.other)
        x = a.astype(np.float64).copy()
        incr = [np.zeros_like(x) for _ in projs]
        it = 0
        for it in range(1, max_iter + 1):
            x_prev = x
            for k, proj in enumerate(projs):
                z = x + incr[k]
                x = proj(z)
                incr[k] = z - x
            if np.linalg.norm(x - x_prev) < tol:
                break
    x = np.asarray(x, dtype=np.float64)
    for g, b in zip(G, h):
        x = _halfspace(x, g, b)
    x = np.clip(x, p.lo, p.hi)
    for f, _ in p.other:
        x = f(x)
    res = _poly_residual(G, h, p.lo, p.hi, x)
    for _, r in p.other:
        res = max(res, r(x))
    return x, int(it), res


def _orthant_pieces(p: _Pieces, w: np.ndarray, cap: float, signs) -> _Pieces:
    q = _Pieces(p.dim, list(p.G), list(p.h), p.lo, p.hi, p.other, [])
    row = np.zeros(p.dim)
    for i, pos in signs:
        e = np.zeros(p.dim)
        if pos:
            e[i] = -w[i]
            row[i] = w[i]
        else:
            e[i] = w[i]
        q.G.append(e)
        q.h.append(0.0)
    q.G.append(row)
    q.h.append(cap)
    return q


def _solve(a: np.ndarray, p: _Pieces, max_iter: int, tol: float):
    if not p.ppos:
        return _run_pieces(a, p, max_iter, tol)
    if len(p.ppos) > 1:
        raise TypeError("at most one PositivePartSum set per projection")
    w, cap = p.ppos[0]
    base = _Pieces(p.dim, p.G, p.h, p.lo, p.hi, p.other, [])

    def ppos_res(z):
        return max(0.0, float(np.maximum(w * z, 0.0).sum()) - cap)

    x0, it0, r0 = _run_pieces(a, base, max_iter, tol)
    if ppos_res(a) <= 0.0 and r0 == 0.0 and np.array_equal(x0, a):
        return x0, it0, 0.0
    support = [i for i in range(p.dim) if w[i] != 0.0]
    cands = []
    total_it = 0
    # the set splits into polyhedra, one per sign pattern of w_i a_i
    for pattern in itertools.product((True, False), repeat=len(support)):
        q = _orthant_pieces(base, w, cap, zip(support, pattern))
        x, it, res = _run_pieces(a, q, max_iter, tol)
        total_it += it
        res = max(res, ppos_res(x))
        cands.append((res > 1e-6, float(np.linalg.norm(x - a)), res, x))
    _, _, res, x = min(cands, key=lambda c: (c[0], c[1] if not c[0] else c[2]))
    return x, total_it, res


# ---------------------------------------------------------------------------
# public, counted


def project_ball(a, radius_sq: float) -> np.ndarray:
    if not radius_sq > 0:
        raise ValueError("radius_sq must be positive")
    QP_COUNTER.bump()
    return _ball(np.asarray(a, dtype=np.float64), float(radius_sq))


def project_box(a, lo, hi) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), a.shape) if np.ndim(lo) == 0 else np.asarray(lo, dtype=np.float64)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), a.shape) if np.ndim(hi) == 0 else np.asarray(hi, dtype=np.float64)
    if lo.shape != a.shape or hi.shape != a.shape:
        raise DimensionMismatch("box bounds and action differ in length")
    if np.any(lo > hi):
        raise ValueError("box needs lo <= hi")
    QP_COUNTER.bump()
    return np.clip(a, lo, hi)


def project_dykstra(a, sets: Sequence[ConstraintSpec], max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL, state=None) -> ProjectionReport:
    """Nearest point of the intersection of ``sets`` by Dykstra's method."""
    a = np.asarray(a, dtype=np.float64)
    QP_COUNTER.bump()
    p = _decompose(sets, a.shape[0], state)
    x, it, res = _solve(a, p, max_iter, tol)
    report = ProjectionReport(x, not np.array_equal(x, a), it, res)
    if res > 1e-6:
        raise NoConvergence(report)
    return report


def _nearest(a: np.ndarray, spec: ConstraintSpec, box: Optional[Box], state) -> tuple:
    """Uncounted exact projection onto ``spec`` (intersected with ``box``)."""
    if isinstance(spec, Ball) and (box is None or _ball_inside_box(spec, box)):
        return _ball(a, spec.radius_sq), 1, 0.0
    if isinstance(spec, Box) and box is None:
        return np.clip(a, spec.lo, spec.hi), 1, 0.0
    if isinstance(spec, SignedSumBand):
        lo = np.full(a.shape, -np.inf) if box is None else box.lo.copy()
        hi = np.full(a.shape, spec.per_cap) if box is None else np.minimum(box.hi, spec.per_cap)
        return _box_slab(a, lo, hi, spec.total - spec.band, spec.total + spec.band), 1, 0.0
    sets = [spec] if box is None else [spec, box]
    p = _decompose(sets, a.shape[0], state)
    return _solve(a, p, DEFAULT_MAX_ITER, DEFAULT_TOL)


def _ball_inside_box(ball: Ball, box: Box) -> bool:
    r = np.sqrt(ball.radius_sq)
    return bool(np.all(box.lo <= -r) and np.all(box.hi >= r))


def project(spec: ConstraintSpec, a, state=None, box: Optional[Box] = None) -> ProjectionReport:
    """QP-Solver: closest point of C(s) (and of the action box, if given) to ``a``.

    The returned action passes :func:`acrl.constraints.is_feasible`. When the
    exact projection lands a rounding error outside, the set is shrunk by a
    tiny margin and projected again.
    """
    a = np.asarray(a, dtype=np.float64)
    QP_COUNTER.bump()
    if spec.contains_rows(a, state)[0] and (box is None or box.contains_rows(a)[0]):
        return ProjectionReport(a.copy(), False, 0, 0.0)
    margin = 0.0
    x, it, res = _nearest(a, spec, box, state)
    for margin in (1e-12, 1e-10, 1e-8, 1e-7):
        if spec.contains_rows(x, state)[0] and (box is None or box.contains_rows(x)[0]):
            break
        s2 = spec.tightened(margin * max(1.0, _scale(spec)))
        b2 = None if box is None else box.tightened(margin * max(1.0, float(np.max(np.abs(box.hi - box.lo)))))
        x, it, res = _nearest(a, s2, b2, state)
    else:
        res = max(spec.residual(x, state), 0.0 if box is None else box.residual(x))
        raise NoConvergence(ProjectionReport(x, True, it, res))
    return ProjectionReport(x, not np.array_equal(x, a), it, float(spec.residual(x, state)))


def _scale(spec) -> float:
    for name in ("radius_sq", "cap", "total"):
        if hasattr(spec, name):
            return abs(float(getattr(spec, name)))
    if isinstance(spec, LinearSystem):
        return float(np.max(np.abs(spec.b)))
    return 1.0
