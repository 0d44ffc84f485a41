"""4x4 gridworld with walls, a slippery floor and a discrete action mask.

Actions: 0 stay, 1 up, 2 down, 3 left, 4 right. Moving off the grid or into
a wall cell is infeasible. Reward is the probability of landing on the goal.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from acrl.constraints import TableMask
from acrl.envs.base import Env
from acrl.tabular import TabularMdp

SIZE = 4
WALLS = frozenset({5, 10})
GOAL = SIZE * SIZE - 1
SLIP = 0.1
MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))


def _target(s: int, a: int) -> Optional[int]:
    r, c = divmod(s, SIZE)
    dr, dc = MOVES[a]
    r2, c2 = r + dr, c + dc
    if not (0 <= r2 < SIZE and 0 <= c2 < SIZE):
        return None
    t = r2 * SIZE + c2
    return None if t in WALLS else t


def gridtab_mdp(gamma: float = 0.95) -> TabularMdp:
    S, A = SIZE * SIZE, len(MOVES)
    P = np.zeros((S, A, S))
    mask = np.zeros((S, A), dtype=bool)
    for s in range(S):
        for a in range(A):
            t = _target(s, a)
            if t is None:
                mask[s, a] = False
                P[s, a, s] = 1.0
            else:
                mask[s, a] = True
                P[s, a, t] += 1.0 - SLIP
                P[s, a, s] += SLIP
    R = P[:, :, GOAL].copy()
    return TabularMdp(P, R, mask, gamma)


class GridTab(Env):
    env_id = "GridTab"
    horizon = 30
    reward_range = (0.0, 1.0)
    action_low = np.zeros(1)
    action_high = np.full(1, float(len(MOVES) - 1))
    obs_low = np.zeros(1)
    obs_high = np.full(1, float(SIZE * SIZE - 1))
    discrete = True

    def __init__(self, seed: Optional[int] = None):
        super().__init__(seed)
        self.mdp = gridtab_mdp()
        self._constraint = TableMask(self.mdp.feasible)

    @property
    def constraint(self):
        return self._constraint

    def _reset(self) -> np.ndarray:
        self.cell = 0
        return np.array([0.0])

    def _step(self, a):
        a = int(a[0])
        probs = self.mdp.P[self.cell, a]
        reward = float(self.mdp.R[self.cell, a])
        self.cell = int(self.rng.choice(probs.shape[0], p=probs))
        return np.array([float(self.cell)]), reward, False
