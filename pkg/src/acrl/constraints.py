"""Declarative feasible action sets C(s).

Every spec is a frozen dataclass exposing ``contains`` (one action),
``contains_rows`` (a batch, one action per row) and ``residual`` (largest
inequality violation, 0 when feasible). Weighted forms accept a
``weights_fn`` mapping the current :class:`~acrl.mdp.EnvState` to the weight
vector; without one the stored ``weights`` are used.

Boundaries count as feasible. The comparison carries a few-ulp slack (see
:data:`acrl.kernels.SLACK`) so that points written down exactly on a
boundary, such as ``[0.1, 0.2]`` on the disc of squared radius 0.05, are not
rejected over the last bit of a rounded sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from acrl import kernels


class DimensionMismatch(ValueError):
    pass


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _rows(A, dim: Optional[int]) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if dim is not None and A.shape[1] != dim:
        raise DimensionMismatch(f"action has {A.shape[1]} components, constraint expects {dim}")
    return np.ascontiguousarray(A)


@dataclass(frozen=True, eq=False)
class Ball:
    """``sum_i a_i**2 <= radius_sq``."""

    radius_sq: float
    dim: Optional[int] = None

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.ball_rows(_rows(A, self.dim), float(self.radius_sq))

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return max(0.0, float(a @ a) - self.radius_sq)

    def tightened(self, margin: float) -> "Ball":
        r = max(np.sqrt(self.radius_sq) - margin, 0.0)
        return replace(self, radius_sq=r * r)


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi))
        if self.lo.shape != self.hi.shape:
            raise DimensionMismatch("lo and hi differ in length")
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi componentwise")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.box_rows(_rows(A, self.dim), self.lo, self.hi)

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return float(max(0.0, np.max(self.lo - a), np.max(a - self.hi)))

    def tightened(self, margin: float) -> "Box":
        mid = 0.5 * (self.lo + self.hi)
        return Box(np.minimum(self.lo + margin, mid), np.maximum(self.hi - margin, mid))


@dataclass(frozen=True, eq=False)
class _Weighted:
    weights: np.ndarray
    cap: float
    weights_fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", _vec(self.weights))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def weights_at(self, state=None) -> np.ndarray:
        if self.weights_fn is None or state is None:
            return self.weights
        w = _vec(self.weights_fn(state))
        if w.shape != self.weights.shape:
            raise DimensionMismatch("weights_fn returned the wrong length")
        return w

    def tightened(self, margin: float):
        return replace(self, cap=max(self.cap - margin, 0.0))


@dataclass(frozen=True, eq=False)
class WeightedAbsSum(_Weighted):
    """``sum_i |w_i a_i| <= cap`` (HalfCheetah form)."""

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.wabs_rows(_rows(A, self.dim), self.weights_at(state), float(self.cap))

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return max(0.0, float(np.abs(self.weights_at(state) * a).sum()) - self.cap)


@dataclass(frozen=True, eq=False)
class PositivePartSum(_Weighted):
    """``sum_i max(w_i a_i, 0) <= cap`` (Hopper form)."""

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.ppos_rows(_rows(A, self.dim), self.weights_at(state), float(self.cap))

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return max(0.0, float(np.maximum(self.weights_at(state) * a, 0.0).sum()) - self.cap)


@dataclass(frozen=True, eq=False)
class SignedSumBand:
    """``|sum_i a_i - total| <= band`` and ``a_i <= per_cap`` (bike sharing)."""

    total: float
    band: float
    per_cap: float
    dim: Optional[int] = None

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.band_rows(_rows(A, self.dim), float(self.total), float(self.band), float(self.per_cap))

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return float(max(0.0, abs(a.sum() - self.total) - self.band, np.max(a) - self.per_cap))

    def tightened(self, margin: float) -> "SignedSumBand":
        return replace(self, band=max(self.band - margin, 0.0), per_cap=self.per_cap - margin)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``A a <= b`` row by row (link capacities)."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.ascontiguousarray(self.A, dtype=np.float64))
        object.__setattr__(self, "b", _vec(self.b))
        if self.A.ndim != 2 or self.A.shape[0] != self.b.shape[0]:
            raise DimensionMismatch("A must be m x d with len(b) == m")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains_rows(self, A, state=None) -> np.ndarray:
        return kernels.linear_rows(_rows(A, self.dim), self.A, self.b)

    def residual(self, a, state=None) -> float:
        a = _rows(a, self.dim)[0]
        return float(max(0.0, np.max(self.A @ a - self.b)))

    def tightened(self, margin: float) -> "LinearSystem":
        norms = np.linalg.norm(self.A, axis=1)
        return LinearSystem(self.A, self.b - margin * norms)


@dataclass(frozen=True, eq=False)
class TableMask:
    """Discrete actions: ``allowed[state_index, action_index]``.

    The state index is ``int(state.vector[0])`` and the action is a length-1
    vector holding the action index.
    """

    allowed: np.ndarray

    def __post_init__(self):
        allowed = np.asarray(self.allowed, dtype=bool)
        if not allowed.any(axis=1).all():
            raise ValueError("every state needs at least one allowed action")
        object.__setattr__(self, "allowed", allowed)

    dim = 1

    def contains_rows(self, A, state=None) -> np.ndarray:
        if state is None:
            raise ValueError("TableMask membership needs the state")
        A = _rows(A, 1)
        row = self.allowed[int(state.vector[0])]
        idx = A[:, 0].astype(np.int64)
        ok = (idx == A[:, 0]) & (idx >= 0) & (idx < row.shape[0])
        ok[ok] = row[idx[ok]]
        return ok

    def residual(self, a, state=None) -> float:
        return 0.0 if self.contains_rows(a, state)[0] else 1.0


ConstraintSpec = Union[Ball, Box, WeightedAbsSum, PositivePartSum, SignedSumBand, LinearSystem, TableMask]


def is_feasible(spec: ConstraintSpec, s, a) -> bool:
    """True iff ``a`` satisfies every inequality of ``spec`` at state ``s``."""
    return bool(spec.contains_rows(a, s)[0])


def feasible_rows(spec: ConstraintSpec, s, A) -> np.ndarray:
    return spec.contains_rows(A, s)
