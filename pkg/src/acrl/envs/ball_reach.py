"""Point mass on [-1, 1]^2 whose per-step displacement must stay in a small disc.

Stands in for Reacher: same disc constraint on a 2-D action, trivial
kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from acrl.constraints import Ball
from acrl.envs.base import Env
from acrl.mdp import EnvState

RADIUS_SQ = 0.05
WORKSPACE = 1.0
GOAL_TOL = 0.02
HORIZON = 50


@dataclass(frozen=True, eq=False)
class BallReachState:
    position: np.ndarray
    goal: np.ndarray


def ball_reach_step(s: BallReachState, a):
    a = np.asarray(a, dtype=np.float64)
    pos = np.clip(s.position + a, -WORKSPACE, WORKSPACE)
    reward = -float(np.linalg.norm(pos - s.goal))
    return BallReachState(pos, s.goal.copy()), reward


class BallReach(Env):
    env_id = "BallReach"
    horizon = HORIZON
    reward_range = (-2.0 * np.sqrt(2.0) * WORKSPACE, 0.0)
    action_low = np.full(2, -1.0)
    action_high = np.full(2, 1.0)
    obs_low = np.full(4, -WORKSPACE)
    obs_high = np.full(4, WORKSPACE)

    _constraint = Ball(RADIUS_SQ, dim=2)

    @property
    def constraint(self):
        return self._constraint

    def _reset(self) -> np.ndarray:
        pos = self.rng.uniform(-WORKSPACE, WORKSPACE, 2)
        goal = self.rng.uniform(-WORKSPACE, WORKSPACE, 2)
        while np.linalg.norm(goal - pos) <= 2 * GOAL_TOL:
            goal = self.rng.uniform(-WORKSPACE, WORKSPACE, 2)
        self.inner = BallReachState(pos, goal)
        return np.concatenate([pos, goal])

    def _step(self, a):
        self.inner, reward = ball_reach_step(self.inner, a)
        reached = -reward <= GOAL_TOL
        return np.concatenate([self.inner.position, self.inner.goal]), reward, reached

    def place(self, position, goal):
        """Reset to an explicit configuration (tests, demos)."""
        self.inner = BallReachState(np.asarray(position, float), np.asarray(goal, float))
        self.state = EnvState(np.concatenate([self.inner.position, self.inner.goal]), 0, False)
        return self.state
