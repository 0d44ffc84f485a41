"""Bike-sharing reallocation.

Each period the operator proposes a target number of bikes per station.
Integer bikes are placed (never more than the fleet), Poisson rental demand
is drawn around a known forecast, served riders drop their bikes at a
destination station, and whatever exceeds a dock's capacity overflows. The
reward is the negative of unmet demand plus overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from acrl.constraints import SignedSumBand
from acrl.envs.base import Env, InfeasibleAction


@dataclass(frozen=True)
class BssParams:
    n: int
    m: int
    capacity: int = 40
    band: float = 5.0
    horizon: int = 24
    amplitude: float = 0.3
    demand_cap: int = 80
    stay_prob: float = 0.5
    stochastic: bool = True
    base_demand: Optional[tuple] = None

    @property
    def base(self) -> np.ndarray:
        if self.base_demand is not None:
            return np.asarray(self.base_demand, dtype=np.float64)
        return np.full(self.n, 0.9 * self.m / self.n)

    @property
    def destinations(self) -> np.ndarray:
        if self.n == 1:
            return np.ones((1, 1))
        off = (1.0 - self.stay_prob) / (self.n - 1)
        return np.full((self.n, self.n), off) + np.eye(self.n) * (self.stay_prob - off)


@dataclass(frozen=True, eq=False)
class BssState:
    station_fill: np.ndarray
    demand_forecast: np.ndarray
    t: int = 0
    seed_lineage: tuple = field(default=(), compare=False)


def forecast_at(params: BssParams, t: int) -> np.ndarray:
    phase = 2.0 * np.pi * np.arange(params.n) / params.n
    return params.base * (1.0 + params.amplitude * np.sin(2.0 * np.pi * t / params.horizon + phase))


def place_bikes(a, m: int, capacity: int) -> np.ndarray:
    """Integer placement from a real-valued target, never exceeding the fleet."""
    placed = np.clip(np.floor(np.asarray(a, dtype=np.float64) + 1e-9), 0, capacity).astype(np.int64)
    for _ in range(int(placed.sum()) - m):
        placed[int(np.argmax(placed))] -= 1
    return placed


def _split(count: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Deterministic largest-remainder split of ``count[i]`` over ``probs[i]``."""
    out = np.zeros(probs.shape[1], dtype=np.int64)
    for c, p in zip(count, probs):
        raw = c * p
        base = np.floor(raw).astype(np.int64)
        left = int(c - base.sum())
        if left:
            base[np.argsort(-(raw - base), kind="stable")[:left]] += 1
        out += base
    return out


def bss_step(s: BssState, a, rng: np.random.Generator, params: BssParams):
    a = np.asarray(a, dtype=np.float64)
    spec = SignedSumBand(params.m, params.band, params.capacity, dim=params.n)
    if not spec.contains_rows(a)[0] or np.any(a < 0):
        raise InfeasibleAction(f"BSS allocation {a} violates the fleet band")
    placed = place_bikes(a, params.m, params.capacity)
    if params.stochastic:
        demand = np.minimum(rng.poisson(s.demand_forecast), params.demand_cap)
    else:
        demand = np.rint(s.demand_forecast).astype(np.int64)
    served = np.minimum(placed, demand)
    unmet = demand - served
    dest = params.destinations
    if params.stochastic:
        returned = np.zeros(params.n, dtype=np.int64)
        for i in range(params.n):
            if served[i]:
                returned += rng.multinomial(int(served[i]), dest[i])
    else:
        returned = _split(served, dest)
    after = placed - served + returned
    overflow = np.maximum(after - params.capacity, 0)
    fill = np.clip(after, 0, params.capacity)
    reward = -float(unmet.sum() + overflow.sum())
    nxt = BssState(fill, forecast_at(params, s.t + 1), s.t + 1, s.seed_lineage)
    return nxt, reward


class Bss(Env):
    def __init__(self, params: BssParams, env_id: str, seed: Optional[int] = None):
        super().__init__(seed)
        self.params = params
        self.env_id = env_id
        self.horizon = params.horizon
        n = params.n
        self.reward_range = (-float(params.demand_cap * n + params.m), 0.0)
        self.action_low = np.zeros(n)
        self.action_high = np.full(n, float(params.capacity))
        peak = float(params.base.max() * (1.0 + params.amplitude))
        self.obs_low = np.zeros(2 * n)
        self.obs_high = np.concatenate([np.full(n, float(params.capacity)), np.full(n, peak)])
        self._constraint = SignedSumBand(float(params.m), params.band, float(params.capacity), dim=n)
        self._seed = seed

    @property
    def constraint(self):
        return self._constraint

    def _reset(self) -> np.ndarray:
        p = self.params
        fill = np.full(p.n, p.m // p.n, dtype=np.int64)
        fill[: p.m - int(fill.sum())] += 1
        self.inner = BssState(np.minimum(fill, p.capacity), forecast_at(p, 0), 0, (self._seed,))
        return self._vector()

    def _vector(self) -> np.ndarray:
        return np.concatenate([self.inner.station_fill.astype(np.float64), self.inner.demand_forecast])

    def _step(self, a):
        self.inner, reward = bss_step(self.inner, a, self.rng, self.params)
        return self._vector(), reward, False


def bss3z(seed=None, **kw) -> Bss:
    return Bss(BssParams(n=3, m=90, **kw), "BSS3z", seed)


def bss5z(seed=None, **kw) -> Bss:
    return Bss(BssParams(n=5, m=150, **kw), "BSS5z", seed)
