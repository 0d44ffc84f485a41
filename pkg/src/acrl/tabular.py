"""Exact finite-MDP machinery for checking the augmentation.

``vi_constrained`` solves the original MDP with the max restricted to
feasible actions. ``vi_augmented`` solves the two-objective augmented MDP
under a fixed preference, where an infeasible action self-loops with reward
``[0, -K]``. ``verify_equivalence`` checks, instance by instance, that the
augmented optimum never picks an infeasible action (when ``lambda_c > 0``)
and that it earns the constrained optimum on the task reward.

Both solvers run value iteration to the requested tolerance and then polish
the greedy policy with exact linear-solve evaluation, so returned values are
exact up to the linear solve rather than up to ``tol / (1 - gamma)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from acrl import kernels
from acrl.mdp import Preference

TIE_TOL = 1e-12
MAX_VI_ITER = 200_000


@dataclass(eq=False)
class TabularMdp:
    P: np.ndarray  # (S, A, S)
    R: np.ndarray  # (S, A), rewards in [0, 1]
    feasible: np.ndarray  # (S, A) bool
    gamma: float

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        self.feasible = np.asarray(self.feasible, dtype=bool)
        S, A = self.R.shape
        if self.P.shape != (S, A, S) or self.feasible.shape != (S, A):
            raise ValueError("inconsistent shapes")
        if not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12) or np.any(self.P < 0):
            raise ValueError("transition rows must be probability vectors")
        if not self.feasible.any(axis=1).all():
            raise ValueError("every state needs a feasible action")
        if np.any(self.R < 0) or np.any(self.R > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.R.shape[0]

    @property
    def n_actions(self) -> int:
        return self.R.shape[1]


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float, feasible_frac: float = 0.4) -> TabularMdp:
    P = rng.dirichlet(np.full(n_states, 0.5), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, (n_states, n_actions))
    mask = rng.uniform(size=(n_states, n_actions)) < feasible_frac
    for s in range(n_states):
        if not mask[s].any():
            mask[s, rng.integers(n_actions)] = True
    return TabularMdp(P, R, mask, gamma)


def augment(m: TabularMdp, K: float):
    """Kernel and 2-D reward of the augmented MDP: ``(P, R)`` with ``R[s, a] = [r, c]``."""
    S, A = m.R.shape
    P = m.P.copy()
    R = np.zeros((S, A, 2))
    R[..., 0] = np.where(m.feasible, m.R, 0.0)
    R[..., 1] = np.where(m.feasible, 0.0, -K)
    for s in range(S):
        for a in range(A):
            if not m.feasible[s, a]:
                P[s, a] = 0.0
                P[s, a, s] = 1.0
    return P, R


def evaluate(P: np.ndarray, R: np.ndarray, gamma: float, policy: np.ndarray):
    """Exact action values of a deterministic policy; ``R`` may carry a trailing objective axis."""
    S = P.shape[0]
    idx = np.arange(S)
    P_pi = P[idx, policy]
    R_pi = R[idx, policy]
    V = np.linalg.solve(np.eye(S) - gamma * P_pi, R_pi)
    return R + gamma * np.tensordot(P, V, axes=([2], [0]))


def greedy(Q: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Argmax per row with lowest-index tie-break."""
    Qm = Q if mask is None else np.where(mask, Q, -np.inf)
    best = Qm.max(axis=1, keepdims=True)
    tol = TIE_TOL * np.maximum(1.0, np.abs(best))
    return np.argmax(Qm >= best - tol, axis=1)


def _polish(score, mask, pi, evaluate_fn):
    """Policy iteration from ``pi``; ``score`` maps exact Q to the scalar being maximised."""
    rows = np.arange(len(pi))
    for _ in range(1000):
        Q = evaluate_fn(pi)
        Sq = score(Q) if mask is None else np.where(mask, score(Q), -np.inf)
        cand = greedy(Sq)
        cur = Sq[rows, pi]
        better = Sq[rows, cand] > cur + TIE_TOL * np.maximum(1.0, np.abs(cur))
        if not better.any():
            return Q, pi
        pi = np.where(better, cand, pi)
    raise RuntimeError("policy polish did not settle")


@dataclass(eq=False)
class ViResult:
    Q: np.ndarray
    policy: np.ndarray
    deltas: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.Q
        yield self.policy


def vi_constrained(m: TabularMdp, tol: float = 1e-10) -> ViResult:
    """Optimal Q over feasible actions (``-inf`` elsewhere) and its greedy policy."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    _, Q, deltas = kernels.value_iteration(m.P, m.R, m.feasible, m.gamma, tol, MAX_VI_ITER)
    pi = greedy(Q, m.feasible)
    Q, pi = _polish(lambda q: q, m.feasible, pi, lambda pi: evaluate(m.P, m.R, m.gamma, pi))
    return ViResult(np.where(m.feasible, Q, -np.inf), pi, deltas)


def vi_augmented(m: TabularMdp, lam: Preference, K: float, tol: float = 1e-10) -> ViResult:
    """Vector Q of the augmented MDP under the policy greedy for ``<lam, Q>``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    P, R = augment(m, K)
    w = lam.as_array()
    R_lam = R @ w
    allowed = np.ones_like(m.feasible)
    _, Q_lam, deltas = kernels.value_iteration(P, R_lam, allowed, m.gamma, tol, MAX_VI_ITER)
    Qv, pi = _polish(lambda q: q @ w, None, greedy(Q_lam), lambda pi: evaluate(P, R, m.gamma, pi))
    return ViResult(Qv, pi, deltas)


def self_loop_value(K: float, gamma: float, lam: Preference) -> float:
    """Scalarised value of repeating an infeasible action forever."""
    return lam.lambda_c * (-K) / (1.0 - gamma)


@dataclass
class Counterexample:
    state: int
    lambda_c: float
    kind: str  # "infeasible" or "suboptimal"
    detail: float


@dataclass
class Report:
    instance: int
    n_states: int
    n_actions: int
    gamma: float
    K: float
    checked: List[float] = field(default_factory=list)
    informational: List[dict] = field(default_factory=list)
    counterexamples: List[Counterexample] = field(default_factory=list)
    max_value_gap: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.counterexamples

    def to_json(self) -> str:
        d = asdict(self)
        d["ok"] = self.ok
        return json.dumps(d, sort_keys=True)


def verify_equivalence(m: TabularMdp, K: float, lam_grid: Iterable[Preference], tol: float = 1e-10, instance: int = 0) -> Report:
    rep = Report(instance, m.n_states, m.n_actions, m.gamma, K)
    Q_star, _ = vi_constrained(m, tol)
    V_star = np.where(m.feasible, Q_star, -np.inf).max(axis=1)
    for lam in lam_grid:
        Qv, pi = vi_augmented(m, lam, K, tol)
        feasible = m.feasible[np.arange(m.n_states), pi]
        if lam.lambda_c == 0.0:
            # no penalty weight: infeasible ties are legitimate
            rep.informational.append({"lambda_c": 0.0, "all_feasible": bool(feasible.all())})
            continue
        rep.checked.append(lam.lambda_c)
        for s in np.flatnonzero(~feasible):
            rep.counterexamples.append(Counterexample(int(s), lam.lambda_c, "infeasible", float(pi[s])))
        if not feasible.all() or lam.lambda_r == 0.0:
            continue
        V_pi = evaluate(m.P, m.R, m.gamma, pi)[np.arange(m.n_states), pi]
        gap = np.abs(V_pi - V_star)
        rep.max_value_gap = max(rep.max_value_gap, float(gap.max()))
        for s in np.flatnonzero(gap > 10 * tol):
            rep.counterexamples.append(Counterexample(int(s), lam.lambda_c, "suboptimal", float(gap[s])))
    return rep


PROP1_GAMMAS = (0.9, 0.99)
PROP1_KS = (0.05, 0.1, 0.2)
PROP1_LAMBDA_C = tuple(round(0.1 * k, 1) for k in range(1, 10))


def prop1_grid(include_boundary: bool = True) -> List[Preference]:
    grid = [Preference(1.0 - lc, lc) for lc in PROP1_LAMBDA_C]
    if include_boundary:
        grid = [Preference(1.0, 0.0)] + grid + [Preference(0.0, 1.0)]
    return grid


def prop1_instances(seed: int, n: int, max_states: int = 8, max_actions: int = 6):
    """Yield ``(mdp, K)`` pairs spanning the discount and penalty sweeps."""
    rng = np.random.default_rng(seed)
    for i in range(n):
        S = int(rng.integers(2, max_states + 1))
        A = int(rng.integers(2, max_actions + 1))
        gamma = PROP1_GAMMAS[i % len(PROP1_GAMMAS)]
        K = PROP1_KS[(i // len(PROP1_GAMMAS)) % len(PROP1_KS)]
        yield random_mdp(rng, S, A, gamma), K


def verify_prop1(seed: int, n: int, tol: float = 1e-10) -> List[Report]:
    return [verify_equivalence(m, K, prop1_grid(), tol, instance=i) for i, (m, K) in enumerate(prop1_instances(seed, n))]
