"""Action-constrained MDP types and the two-objective augmentation.

The augmentation turns a constrained environment into an unconstrained one:
a feasible action steps the real dynamics and earns ``[r, 0]`` with ``r``
affinely rescaled into [0, 1]; an infeasible action leaves the state where
it is and earns ``[0, -K]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from acrl.constraints import ConstraintSpec, is_feasible

PREF_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class EnvState:
    vector: np.ndarray
    step_index: int = 0
    done: bool = False

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if self.step_index < 0:
            raise ValueError("step_index must be non-negative")

    def same_point(self, other: "EnvState") -> bool:
        return np.array_equal(self.vector, other.vector)


@dataclass(frozen=True)
class Preference:
    lambda_r: float
    lambda_c: float

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_c < 0:
            raise ValueError("preference weights must be non-negative")
        if abs(self.lambda_r + self.lambda_c - 1.0) > PREF_ATOL:
            raise ValueError(f"preference must sum to 1, got {self.lambda_r + self.lambda_c!r}")

    @classmethod
    def from_reward_weight(cls, lambda_r: float) -> "Preference":
        return cls(float(lambda_r), 1.0 - float(lambda_r))

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_r, self.lambda_c])


@dataclass(frozen=True)
class AugmentedReward:
    r: float
    c: float
    raw: float = field(default=float("nan"), compare=False)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.c])


@dataclass(frozen=True)
class PenaltyConfig:
    K: float = 0.1
    gamma: float = 0.99

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


def scalarize(q, lam) -> float | np.ndarray:
    """Linear scalarisation ``lam_r * q[..., 0] + lam_c * q[..., 1]``.

    ``lam`` may be a :class:`Preference`, a length-2 array, or an array of
    per-row preferences broadcastable against ``q``.
    """
    q = np.asarray(q, dtype=np.float64)
    lam = lam.as_array() if isinstance(lam, Preference) else np.asarray(lam, dtype=np.float64)
    out = lam[..., 0] * q[..., 0] + lam[..., 1] * q[..., 1]
    return float(out) if np.ndim(out) == 0 else out


def rescale_reward(r: float, reward_range: Tuple[float, float]) -> float:
    lo, hi = reward_range
    return float(np.clip((r - lo) / (hi - lo), 0.0, 1.0))


def augment_step(env, spec: ConstraintSpec, cfg: PenaltyConfig, s: EnvState, a):
    """One transition of the augmented MDP.

    Returns ``(next_state, AugmentedReward, done)``. Infeasible actions never
    reach ``env``: the state vector is returned unchanged, ``step_index``
    advances by one (a self-loop still spends episode budget) and ``done`` is
    False.
    """
    if s.done:
        raise ValueError("augment_step called on a terminal state")
    if not is_feasible(spec, s, a):
        loop = EnvState(s.vector, s.step_index + 1, False)
        return loop, AugmentedReward(0.0, -cfg.K, 0.0), False
    s_next, r, done = env.step(a)
    return s_next, AugmentedReward(rescale_reward(r, env.reward_range), 0.0, r), done


class AutoMdp:
    """Stateful wrapper exposing the augmented MDP of ``env``."""

    def __init__(self, env, cfg: PenaltyConfig | None = None):
        self.env = env
        self.cfg = cfg or PenaltyConfig()
        self.state: EnvState | None = None
        self.self_loops = 0

    @property
    def spec(self) -> ConstraintSpec:
        return self.env.constraint

    def reset(self, seed=None) -> EnvState:
        self.state = self.env.reset(seed)
        return self.state

    def step(self, a):
        s_next, rew, done = augment_step(self.env, self.spec, self.cfg, self.state, a)
        if rew.c < 0:
            self.self_loops += 1
        self.state = s_next
        return s_next, rew, done

    @property
    def truncated(self) -> bool:
        return self.state is not None and self.state.step_index >= self.env.horizon
