from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from acrl.constraints import Box, ConstraintSpec, is_feasible
from acrl.mdp import EnvState


class InfeasibleAction(ValueError):
    """Raised when an action outside C(s) reaches the environment dynamics."""


class Env:
    """Minimal episodic environment with a declared feasible action set.

    Subclasses fill in the class attributes and implement ``_reset`` and
    ``_step``. ``step`` refuses infeasible actions and counts every such
    attempt in ``infeasible_calls``, which training code audits.
    """

    env_id: str = ""
    horizon: int = 1
    reward_range: Tuple[float, float] = (0.0, 1.0)
    action_low: np.ndarray
    action_high: np.ndarray
    obs_low: np.ndarray
    obs_high: np.ndarray
    discrete: bool = False

    def __init__(self, seed: Optional[int] = None):
        self.rng = np.random.default_rng(seed)
        self.infeasible_calls = 0
        self.state: Optional[EnvState] = None

    @property
    def state_dim(self) -> int:
        return int(self.obs_low.shape[0])

    @property
    def action_dim(self) -> int:
        return int(self.action_low.shape[0])

    @property
    def action_box(self) -> Box:
        return Box(self.action_low, self.action_high)

    @property
    def constraint(self) -> ConstraintSpec:
        raise NotImplementedError

    def reset(self, seed: Optional[int] = None) -> EnvState:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = EnvState(self._reset(), 0, False)
        return self.state

    def step(self, a) -> Tuple[EnvState, float, bool]:
        if self.state is None or self.state.done:
            raise RuntimeError("call reset() first")
        a = np.asarray(a, dtype=np.float64)
        if not is_feasible(self.constraint, self.state, a):
            self.infeasible_calls += 1
            raise InfeasibleAction(f"{self.env_id}: action {a} violates C(s)")
        vec, reward, terminal = self._step(a)
        t = self.state.step_index + 1
        done = bool(terminal or t >= self.horizon)
        self.state = EnvState(vec, t, done)
        return self.state, float(reward), done

    def _reset(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, a: np.ndarray):
        raise NotImplementedError
