"""Acceptance-rejection sampling of feasible actions.

With the target taken as the policy restricted to C(s) (and renormalised),
the acceptance probability of a feasible proposal is exactly one, so the
accept test reduces to a membership check and the accepted actions follow
the policy conditioned on C(s).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from acrl.constraints import Box, ConstraintSpec, feasible_rows
from acrl.projection import project

ACCEPT_SLACK = 1e-9


class Fallback(enum.Enum):
    PROJECT = "project"
    FAIL = "fail"


@dataclass(frozen=True)
class Proposal:
    """Noise family applied before squashing: Gaussian, or Student-t with ``nu`` degrees of freedom."""

    nu: Optional[float] = None

    def __post_init__(self):
        if self.nu is not None and not self.nu > 0:
            raise ValueError("Student-t degrees of freedom must be positive")

    @classmethod
    def parse(cls, text: str) -> "Proposal":
        t = text.strip().lower()
        if t == "gaussian":
            return cls()
        if t.startswith("studentt"):
            return cls(float(t[len("studentt") :].strip("()")))
        raise ValueError(f"unknown proposal {text!r}")


GAUSSIAN = Proposal()


@dataclass(frozen=True)
class ArmConfig:
    max_attempts: int = 100
    fallback: Fallback = Fallback.PROJECT
    proposal: Proposal = GAUSSIAN
    chunk: int = 8  # proposals drawn per policy evaluation

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.chunk < 1:
            raise ValueError("chunk must be at least 1")


TRAIN_ARM = ArmConfig(max_attempts=100)
EVAL_ARM = ArmConfig(max_attempts=10)


@dataclass
class ArmResult:
    action: np.ndarray
    attempts: int
    rejected: List[np.ndarray] = field(default_factory=list)
    fallback_used: bool = False


class SamplingExhausted(RuntimeError):
    def __init__(self, rejected: List[np.ndarray]):
        super().__init__(f"no feasible proposal in {len(rejected)} attempts")
        self.rejected = rejected


class DominationError(ValueError):
    """The envelope constant M is too small for the target."""


def acceptance_probability(policy_density: float, target_density: float, M: float) -> float:
    if not M > 0:
        raise ValueError("M must be positive")
    if policy_density <= 0:
        if target_density > 0:
            raise DominationError("target has mass where the proposal has none")
        return 0.0
    ratio = target_density / (M * policy_density)
    if ratio > 1.0 + ACCEPT_SLACK:
        raise DominationError(f"acceptance ratio {ratio} exceeds 1; increase M")
    return min(ratio, 1.0)


def arm_sample(policy, s, spec: ConstraintSpec, cfg: ArmConfig, rng: np.random.Generator, lam=None) -> ArmResult:
    """Draw proposals until one lands in C(s).

    ``policy`` is either a :class:`acrl.nn.GaussianPolicy` (then ``lam`` is its
    preference input) or any callable ``(n, rng) -> (n, da)`` proposal sampler.
    """
    if lam is not None and hasattr(lam, "as_array"):
        lam = lam.as_array()
    rejected: List[np.ndarray] = []
    last = None
    remaining = cfg.max_attempts
    while remaining > 0:
        k = min(cfg.chunk, remaining)
        props = _propose(policy, s, lam, k, cfg.proposal, rng)
        ok = feasible_rows(spec, s, props)
        hit = int(np.argmax(ok)) if ok.any() else -1
        if hit >= 0:
            rejected.extend(props[:hit])
            return ArmResult(props[hit], len(rejected) + 1, rejected, False)
        rejected.extend(props)
        last = props[-1]
        remaining -= k
    if cfg.fallback is Fallback.FAIL:
        raise SamplingExhausted(rejected)
    box = Box(policy.lo, policy.hi) if hasattr(policy, "lo") else None
    fixed = project(spec, last, state=s, box=box).projected
    return ArmResult(fixed, len(rejected), rejected, True)


def _propose(policy, s, lam, k, proposal: Proposal, rng) -> np.ndarray:
    if callable(policy) and not hasattr(policy, "sample"):
        return np.asarray(policy(k, rng), dtype=np.float64).reshape(k, -1)
    vec = s.vector if hasattr(s, "vector") else s
    a, _ = policy.sample(vec, lam, rng, n=k, student_t=proposal.nu)
    return a


@dataclass
class ArmBatch:
    actions: np.ndarray  # (n, da)
    attempts: np.ndarray  # (n,)
    fallback_used: np.ndarray  # (n,) bool


def arm_sample_batch(policy, s, spec: ConstraintSpec, cfg: ArmConfig, rng: np.random.Generator, n: int, lam=None) -> ArmBatch:
    """``n`` independent ARM draws at one state, vectorised.

    Each draw gets its own proposal sequence and keeps its first feasible
    proposal, so every row is distributed exactly as one :func:`arm_sample`
    call. Rejected proposals are not returned.
    """
    if lam is not None and hasattr(lam, "as_array"):
        lam = lam.as_array()
    out: Optional[np.ndarray] = None
    attempts = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    last = None
    while pending.size and attempts[pending[0]] < cfg.max_attempts:
        props = _propose(policy, s, lam, pending.size, cfg.proposal, rng)
        if out is None:
            out = np.empty((n, props.shape[1]))
        attempts[pending] += 1
        ok = feasible_rows(spec, s, props)
        out[pending[ok]] = props[ok]
        last = props[~ok]
        pending = pending[~ok]
    fallback = np.zeros(n, dtype=bool)
    if pending.size:
        if cfg.fallback is Fallback.FAIL:
            raise SamplingExhausted([])
        box = Box(policy.lo, policy.hi) if hasattr(policy, "lo") else None
        for i, a in zip(pending, last):
            out[i] = project(spec, a, state=s, box=box).projected
        fallback[pending] = True
    return ArmBatch(out, attempts, fallback)
