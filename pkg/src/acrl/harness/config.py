"""Run configuration: a flat ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, Optional

from acrl.envs import ENV_IDS
from acrl.mosac import FIELD_TYPES, TrainerConfig

SEED_ENV = "ACRL_SEED"

# desk-scale profile: the entropy coefficient and batch size that fit the
# 30k-step single-CPU budget (see README)
PROFILES: Dict[str, TrainerConfig] = {
    "desk": TrainerConfig(alpha=0.05, batch=128),
    "full": TrainerConfig(hidden=(256, 256)),
}

ALIASES = {"env": "env_id", "steps": "total_steps", "metrics": "metrics_path", "checkpoint": "checkpoint_path"}
ALGO_NAMES = {"aram": "aram", "projection": "projection", "projectionbaseline": "projection", "baseline": "projection"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env_id: str = "BallReach"
    algo: str = "aram"
    seed: int = 0
    total_steps: int = 30_000
    eval_interval: int = 5000
    eval_episodes: int = 10
    metrics_path: str = "metrics.csv"
    checkpoint_path: Optional[str] = "checkpoint.bin"
    profile: str = "desk"
    overrides: Dict[str, str] = field(default_factory=dict)

    def trainer(self) -> TrainerConfig:
        base = PROFILES[self.profile]
        kw = {k: _coerce(k, v) for k, v in self.overrides.items()}
        kw.update(algo=self.algo, eval_interval=self.eval_interval, eval_episodes=self.eval_episodes)
        try:
            return replace(base, **kw)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def validate(self) -> "RunConfig":
        if self.env_id not in ENV_IDS or self.env_id == "GridTab":
            raise ConfigError(f"env must be one of {', '.join(e for e in ENV_IDS if e != 'GridTab')}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {', '.join(PROFILES)}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.eval_interval < 1 or (self.total_steps > 0 and self.eval_interval > self.total_steps):
            raise ConfigError("eval_interval must lie in [1, total_steps]")
        self.trainer()
        return self


_RUN_FIELDS = {f.name: f.type for f in fields(RunConfig) if f.name != "overrides"}


def _coerce(key: str, text: str):
    typ = FIELD_TYPES.get(key) or _RUN_FIELDS.get(key)
    if typ is None:
        raise ConfigError(f"unknown config key {key!r}")
    text = str(text).strip()
    try:
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if typ.startswith("Tuple"):
            parts = [p for p in text.strip("()[]").replace(",", " ").split()]
            cast = int if "int" in typ else float
            return tuple(cast(p) for p in parts)
        if typ.startswith("Optional") and text.lower() in ("", "none"):
            return None
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_pairs(lines: Iterable[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def build(pairs: Dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        pairs = {"seed": env_seed, **pairs}
    for k, v in pairs.items():
        k = ALIASES.get(k, k)
        if k == "algo":
            name = ALGO_NAMES.get(str(v).strip().lower().replace("_", ""))
            if name is None:
                raise ConfigError(f"algo must be aram or projection, got {v!r}")
            cfg.algo = name
        elif k in _RUN_FIELDS:
            setattr(cfg, k, _coerce(k, v))
        elif k in FIELD_TYPES:
            cfg.overrides[k] = str(v)
        else:
            raise ConfigError(f"unknown config key {k!r}")
    return cfg.validate()


def load(path: Optional[str], flags: Optional[Dict[str, str]] = None) -> RunConfig:
    """Read ``path`` (may be None) and apply ``flags`` on top; flags win."""
    pairs: Dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as fh:
                pairs = parse_pairs(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
    pairs.update({k.lower(): v for k, v in (flags or {}).items() if v is not None})
    return build(pairs)
