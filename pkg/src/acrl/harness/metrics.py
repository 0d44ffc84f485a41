"""Evaluation metrics, the projection-baseline action map, and the metrics CSV."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import astuple, dataclass, fields
from typing import Iterable, List, Optional, Tuple

import numpy as np

from acrl.arm import EVAL_ARM, ArmConfig, arm_sample
from acrl.constraints import Box, feasible_rows, is_feasible
from acrl.envs import make
from acrl.projection import project

VALID_RATE_SAMPLES = 100
EVAL_PREFERENCE = (0.9, 0.1)


@dataclass
class MetricsRow:
    step: int
    wall_ms: float
    eval_return: float
    valid_action_rate: float
    qp_count_cum: int
    eta: float
    critic_loss: float
    policy_loss: float
    per_action_inference_us: float


COLUMNS = [f.name for f in fields(MetricsRow)]
_TYPES = [f.type for f in fields(MetricsRow)]


def write_csv(rows: Iterable[MetricsRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(row)])


def read_csv(fh) -> List[MetricsRow]:
    r = csv.reader(fh)
    header = next(r)
    if header != COLUMNS:
        raise ValueError(f"unexpected metrics header {header}")
    out = []
    for rec in r:
        vals = [int(v) if t in ("int", int) else float(v) for v, t in zip(rec, _TYPES)]
        out.append(MetricsRow(*vals))
    return out


def rows_to_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def uniform_feasible(env, s, rng: np.random.Generator, draws: int = 4096, chunk: int = 256):
    """Uniform draw from the action box conditioned on C(s).

    Returns ``(action, rejected, projected)``. If no draw lands in C(s) the
    last one is projected.
    """
    lo, hi = env.action_low, env.action_high
    rejected = []
    for _ in range(max(1, draws // chunk)):
        A = rng.uniform(lo, hi, (chunk, lo.shape[0]))
        if env.discrete:
            A = np.floor(A + 0.5)
        ok = feasible_rows(env.constraint, s, A)
        if ok.any():
            i = int(np.argmax(ok))
            rejected.extend(A[:i])
            return A[i], rejected, False
        rejected.extend(A)
    return project(env.constraint, A[-1], state=s, box=Box(lo, hi)).projected, rejected, True


def valid_rate_at(policy, s, lam, rng, n: int = VALID_RATE_SAMPLES, spec=None) -> float:
    A, _ = policy.sample(s.vector, lam, rng, n=n)
    return float(feasible_rows(spec, s, A).mean())


def evaluate_policy(
    policy,
    env_id: str,
    lam=EVAL_PREFERENCE,
    episodes: int = 10,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
    arm: ArmConfig = EVAL_ARM,
) -> Tuple[float, float, float]:
    """Mean unscaled return, mean 100-sample valid rate, and mean microseconds per action.

    ``policy=None`` evaluates the uniform-random feasible policy instead.
    Episode ``i`` starts from ``env.reset(seed + i)`` so calls with the same
    seed face the same initial states.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    lam = np.asarray(lam.as_array() if hasattr(lam, "as_array") else lam, dtype=np.float64)
    env = make(env_id)
    spec = env.constraint
    returns, rates, times = [], [], []
    for ep in range(episodes):
        s = env.reset(seed + ep)
        total = 0.0
        while not s.done:
            if policy is None:
                t0 = time.perf_counter()
                a, _, _ = uniform_feasible(env, s, rng)
                times.append(time.perf_counter() - t0)
                rates.append(np.nan)
            else:
                rates.append(valid_rate_at(policy, s, lam, rng, spec=spec))
                t0 = time.perf_counter()
                a = arm_sample(policy, s, spec, arm, rng, lam).action
                times.append(time.perf_counter() - t0)
            s, r, _ = env.step(a)
            total += r
        returns.append(total)
    rate = float(np.mean(rates)) if policy is not None else float("nan")
    return float(np.mean(returns)), rate, 1e6 * float(np.mean(times))


def projection_baseline_step(policy, s, spec, rng: Optional[np.random.Generator] = None, lam=EVAL_PREFERENCE) -> Tuple[np.ndarray, bool, np.ndarray]:
    """One action of the project-if-infeasible baseline.

    Returns ``(a_env, qp_used, a_raw)``; the raw sample is what the baseline
    critic trains on.
    """
    rng = np.random.default_rng() if rng is None else rng
    lam = np.asarray(lam.as_array() if hasattr(lam, "as_array") else lam, dtype=np.float64)
    a_raw, _ = policy.sample(s.vector, lam, rng)
    if is_feasible(spec, s, a_raw):
        return a_raw, False, a_raw
    box = Box(policy.lo, policy.hi)
    return project(spec, a_raw, state=s, box=box).projected, True, a_raw
