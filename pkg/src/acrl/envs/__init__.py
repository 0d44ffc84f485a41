"""Environment registry keyed by string id."""

from __future__ import annotations

from typing import Callable, Dict, Optional

from acrl.constraints import ConstraintSpec
from acrl.envs.ball_reach import BallReach, BallReachState, ball_reach_step
from acrl.envs.base import Env, InfeasibleAction
from acrl.envs.bss import Bss, BssParams, BssState, bss3z, bss5z, bss_step
from acrl.envs.gridtab import GridTab, gridtab_mdp
from acrl.envs.nsfnet import ROUTING, NsfnetLite, NsfState, nsfnet_reward, nsfnet_step

_REGISTRY: Dict[str, Callable[..., Env]] = {
    "BSS3z": bss3z,
    "BSS5z": bss5z,
    "NSFnetLite": NsfnetLite,
    "BallReach": BallReach,
    "GridTab": GridTab,
}

ENV_IDS = tuple(_REGISTRY)


class UnknownEnv(KeyError):
    pass


def make(env_id: str, seed: Optional[int] = None) -> Env:
    try:
        factory = _REGISTRY[env_id]
    except KeyError:
        raise UnknownEnv(f"unknown env id {env_id!r}; choose from {', '.join(ENV_IDS)}") from None
    return factory(seed=seed)


def constraint_spec_of(env_id: str) -> ConstraintSpec:
    return make(env_id).constraint


__all__ = [
    "ENV_IDS",
    "ROUTING",
    "BallReach",
    "BallReachState",
    "Bss",
    "BssParams",
    "BssState",
    "Env",
    "GridTab",
    "InfeasibleAction",
    "NsfState",
    "NsfnetLite",
    "UnknownEnv",
    "ball_reach_step",
    "bss_step",
    "constraint_spec_of",
    "gridtab_mdp",
    "make",
    "nsfnet_reward",
    "nsfnet_step",
]
