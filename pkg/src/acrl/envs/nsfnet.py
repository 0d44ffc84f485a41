"""Nine packet flows sharing eight capacity-limited links.

The link/flow incidence below is fixed at build time; every link carries
between two and four flows and every flow crosses at least two links.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from acrl.constraints import LinearSystem
from acrl.envs.base import Env, InfeasibleAction

N_FLOWS = 9
N_LINKS = 8
LINK_CAPACITY = 50.0
OVER_ALLOC_COST = 0.1
DEMAND_RANGE = (5.0, 35.0)
DEMAND_STEP_STD = 2.0
HORIZON = 50

# ROUTING[j, i] == 1 iff flow i crosses link j
_LINKS = (
    (0, 1, 2),
    (1, 3),
    (2, 4, 5),
    (3, 6),
    (4, 7, 8),
    (5, 6, 8),
    (0, 7),
    (2, 3, 6, 8),
)
ROUTING = np.zeros((N_LINKS, N_FLOWS))
for _j, _flows in enumerate(_LINKS):
    ROUTING[_j, list(_flows)] = 1.0
ROUTING.setflags(write=False)


@dataclass(frozen=True, eq=False)
class NsfState:
    link_load: np.ndarray
    flow_demand: np.ndarray


def nsfnet_reward(a, demand) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.minimum(a, demand).sum() - OVER_ALLOC_COST * np.maximum(a - demand, 0.0).sum())


def nsfnet_step(s: NsfState, a, rng: np.random.Generator):
    a = np.asarray(a, dtype=np.float64)
    if not LinearSystem(ROUTING, np.full(N_LINKS, LINK_CAPACITY)).contains_rows(a)[0]:
        raise InfeasibleAction(f"link capacity exceeded by {a}")
    reward = nsfnet_reward(a, s.flow_demand)
    demand = np.clip(s.flow_demand + rng.normal(0.0, DEMAND_STEP_STD, N_FLOWS), *DEMAND_RANGE)
    return NsfState(ROUTING @ a, demand), reward


class NsfnetLite(Env):
    env_id = "NSFnetLite"
    horizon = HORIZON
    reward_range = (-OVER_ALLOC_COST * N_FLOWS * LINK_CAPACITY, N_FLOWS * DEMAND_RANGE[1])
    action_low = np.zeros(N_FLOWS)
    action_high = np.full(N_FLOWS, LINK_CAPACITY)
    obs_low = np.concatenate([np.zeros(N_LINKS), np.full(N_FLOWS, DEMAND_RANGE[0])])
    obs_high = np.concatenate([np.full(N_LINKS, LINK_CAPACITY), np.full(N_FLOWS, DEMAND_RANGE[1])])

    _constraint = LinearSystem(ROUTING, np.full(N_LINKS, LINK_CAPACITY))

    def __init__(self, seed: Optional[int] = None):
        super().__init__(seed)

    @property
    def constraint(self):
        return self._constraint

    def _reset(self) -> np.ndarray:
        demand = self.rng.uniform(*DEMAND_RANGE, N_FLOWS)
        self.inner = NsfState(np.zeros(N_LINKS), demand)
        return self._vector()

    def _vector(self):
        return np.concatenate([self.inner.link_load, self.inner.flow_demand])

    def _step(self, a):
        self.inner, reward = nsfnet_step(self.inner, a, self.rng)
        return self._vector(), reward, False
