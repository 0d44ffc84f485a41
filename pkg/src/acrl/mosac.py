"""Preference-conditioned soft actor-critic on the augmented two-objective MDP.

Each episode draws a behaviour preference from Dirichlet(1, 1). Actions come
from acceptance-rejection sampling; every rejected proposal becomes a
zero-reward, ``-K``-penalty self-loop in the augmented buffer and the
accepted action's transition goes to the real buffer. Updates scalarise the
two-dimensional reward and critic outputs with a preference that is
resampled per gradient step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np

from acrl.arm import ArmConfig, Fallback, Proposal, arm_sample
from acrl.envs import make
from acrl.harness.metrics import MetricsRow, evaluate_policy, projection_baseline_step, uniform_feasible
from acrl.mdp import Preference, rescale_reward
from acrl.nn import Adam, GaussianPolicy, VectorCritic, load_checkpoint, save_checkpoint, soft_update
from acrl.replay import DualReplay

ALGOS = ("aram", "projection")


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch: int = 256
    target_update_interval: int = 1
    gradient_steps: int = 1
    alpha: float = 0.2
    K: float = 0.1
    eta: float = 0.2
    eta_decay_interval: int = 10_000
    eta_decay_factor: float = 0.9
    buffer_capacity: int = 1_000_000
    hidden: Tuple[int, ...] = (64, 64)
    warmup: int = 1000
    max_rejected_stored: int = 8
    train_max_attempts: int = 100
    eval_max_attempts: int = 10
    proposal: str = "gaussian"
    eval_preference: Tuple[float, float] = (0.9, 0.1)
    preference_per_sample: bool = False
    eval_interval: int = 5000
    eval_episodes: int = 10
    algo: str = "aram"

    def __post_init__(self):
        checks = [
            (0.0 < self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]"),
            (self.lr > 0, "lr must be positive"),
            (self.batch >= 1, "batch must be positive"),
            (self.target_update_interval >= 1, "target_update_interval must be positive"),
            (self.gradient_steps >= 0, "gradient_steps must be non-negative"),
            (self.alpha >= 0, "alpha must be non-negative"),
            (self.K > 0, "K must be positive"),
            (0.0 <= self.eta <= 1.0, "eta must lie in [0, 1]"),
            (self.eta_decay_interval >= 1, "eta_decay_interval must be positive"),
            (0.0 < self.eta_decay_factor <= 1.0, "eta_decay_factor must lie in (0, 1]"),
            (self.warmup >= 0, "warmup must be non-negative"),
            (self.max_rejected_stored >= 0, "max_rejected_stored must be non-negative"),
            (self.train_max_attempts >= 1 and self.eval_max_attempts >= 1, "max attempts must be positive"),
            (self.eval_interval >= 1, "eval_interval must be positive"),
            (self.eval_episodes >= 1, "eval_episodes must be positive"),
            (self.algo in ALGOS, f"algo must be one of {ALGOS}"),
            (all(h >= 1 for h in self.hidden), "hidden widths must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        Preference(*self.eval_preference)
        Proposal.parse(self.proposal)

    @property
    def train_arm(self) -> ArmConfig:
        return ArmConfig(self.train_max_attempts, Fallback.PROJECT, Proposal.parse(self.proposal))

    @property
    def eval_arm(self) -> ArmConfig:
        return ArmConfig(self.eval_max_attempts, Fallback.PROJECT, Proposal.parse(self.proposal))


FIELD_TYPES = {f.name: f.type for f in fields(TrainerConfig)}


def sample_preference(rng: np.random.Generator) -> Preference:
    lr = float(rng.uniform())
    return Preference(lr, 1.0 - lr)


def sample_preferences(rng: np.random.Generator, n: int) -> np.ndarray:
    lr = rng.uniform(size=n)
    return np.stack([lr, 1.0 - lr], axis=1)


@dataclass
class Nets:
    policy: GaussianPolicy
    critic: VectorCritic
    policy_opt: Adam
    critic_opt: Adam

    @classmethod
    def init(cls, env, cfg: TrainerConfig, rng: np.random.Generator) -> "Nets":
        policy = GaussianPolicy.init(env, cfg.hidden, rng)
        critic = VectorCritic.init(env, cfg.hidden, rng)
        return cls(
            policy,
            critic,
            Adam(policy.trunk.params, cfg.lr),
            Adam(critic.nets[0].params + critic.nets[1].params, cfg.lr),
        )


def _lam_rows(lam, n: int) -> np.ndarray:
    lam = lam.as_array() if isinstance(lam, Preference) else np.asarray(lam, dtype=np.float64)
    return np.broadcast_to(lam, (n, 2)) if lam.ndim == 1 else lam


# ---------------------------------------------------------------------------
# losses, each exposed as a pure function of (params, batch, lam, noise)


def scalarized_target(r, c, done, lam_rows, q_next_twins, logp_next, gamma: float, alpha: float) -> np.ndarray:
    """``<lam, [r, c]> + gamma (1 - done) (min_k <lam, Q_k(s', a')> - alpha logp(a'))``."""
    reward = lam_rows[:, 0] * r + lam_rows[:, 1] * c
    q = (q_next_twins * lam_rows).sum(axis=-1).min(axis=0)
    return reward + gamma * (1.0 - done) * (q - alpha * logp_next)


def critic_target(batch, lam, nets: Nets, cfg: TrainerConfig, rng: Optional[np.random.Generator] = None, eps: Optional[np.ndarray] = None) -> np.ndarray:
    n = len(batch.r)
    L = _lam_rows(lam, n)
    pol, crit = nets.policy, nets.critic
    if eps is None:
        eps = rng.standard_normal((n, pol.action_dim))
    ctx = pol.rsample(batch.s_next, L, eps)
    q = crit.evaluate(batch.s_next, ctx["y"], L, target=True)
    return scalarized_target(batch.r, batch.c, batch.done.astype(np.float64), L, q, ctx["logp"], cfg.gamma, cfg.alpha)


def critic_loss_and_grads(critic: VectorCritic, batch, lam, y: np.ndarray):
    """Sum over twins of the mean squared scalarised TD error, with parameter grads."""
    n = y.shape[0]
    L = _lam_rows(lam, n)
    x = critic.inputs(batch.s, critic.unit_action(batch.a), L)
    loss, grads = 0.0, []
    for net in critic.nets:
        out, cache = net.forward(x)
        delta = (out * L).sum(axis=1) - y
        loss += float(np.mean(delta * delta))
        g, _ = net.backward(cache, (2.0 / n) * delta[:, None] * L, need_input_grad=False)
        grads += g
    return loss, grads


def critic_update(nets: Nets, batch, lam, cfg: TrainerConfig, rng: np.random.Generator) -> float:
    y = critic_target(batch, lam, nets, cfg, rng)
    loss, grads = critic_loss_and_grads(nets.critic, batch, lam, y)
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite critic loss {loss}")
    nets.critic_opt.step(grads)
    return loss


def policy_loss_and_grads(policy: GaussianPolicy, critic: VectorCritic, states, lam, eps: np.ndarray, alpha: float):
    """``mean(alpha logp(a|s) - min_k <lam, Q_k(s, a)>)`` with reparameterised ``a``; critic frozen."""
    n = eps.shape[0]
    L = _lam_rows(lam, n)
    ctx = policy.rsample(states, L, eps)
    x = critic.inputs(states, ctx["y"], L)
    outs = [net.forward(x) for net in critic.nets]
    sc = np.stack([(o * L).sum(axis=1) for o, _ in outs])
    pick = np.argmin(sc, axis=0)
    q = sc[pick, np.arange(n)]
    loss = float(np.mean(alpha * ctx["logp"] - q))
    ds = x.shape[1] - policy.action_dim - 2
    d_y = np.zeros_like(ctx["y"])
    for k, (net, (_, cache)) in enumerate(zip(critic.nets, outs)):
        sel = (pick == k).astype(np.float64)[:, None]
        if not sel.any():
            continue
        _, dx = net.backward(cache, -(1.0 / n) * sel * L)
        d_y += dx[:, ds : ds + policy.action_dim]
    grads = policy.backward(ctx, d_y, np.full(n, alpha / n))
    return loss, grads


def policy_update(nets: Nets, batch, lam, cfg: TrainerConfig, rng: np.random.Generator) -> float:
    eps = rng.standard_normal((len(batch.r), nets.policy.action_dim))
    loss, grads = policy_loss_and_grads(nets.policy, nets.critic, batch.s, lam, eps, cfg.alpha)
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite policy loss {loss}")
    nets.policy_opt.step(grads)
    return loss


def update_targets(critic: VectorCritic, tau: float) -> None:
    for tgt, net in zip(critic.targets, critic.nets):
        soft_update(tgt, net, tau)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainLog:
    env_id: str
    seed: int
    config: TrainerConfig
    rows: List[MetricsRow] = field(default_factory=list)
    initial: Optional[MetricsRow] = None
    qp_count: int = 0
    env_steps: int = 0
    rejected_total: int = 0
    rejected_stored: int = 0
    infeasible_env_calls: int = 0
    eval_seed: int = 0
    nets: Optional[Nets] = None

    @property
    def final(self) -> Optional[MetricsRow]:
        return self.rows[-1] if self.rows else self.initial


def train(
    env_id: str,
    cfg: TrainerConfig,
    seed: int,
    total_steps: int,
    checkpoint_path=None,
    evaluate: bool = True,
) -> TrainLog:
    if total_steps < 0:
        raise ValueError("total_steps must be non-negative")
    root = np.random.SeedSequence(seed)
    init_ss, act_ss, upd_ss, eval_ss = root.spawn(4)
    env = make(env_id, seed=int(act_ss.generate_state(1)[0]))
    spec = env.constraint
    nets = Nets.init(env, cfg, np.random.default_rng(init_ss))
    act_rng = np.random.default_rng(act_ss)
    upd_rng = np.random.default_rng(upd_ss)
    eval_seed = int(eval_ss.generate_state(1)[0] % (2**31))
    buf = DualReplay(env.state_dim, env.action_dim, cfg.buffer_capacity, cfg.eta, cfg.eta_decay_interval, cfg.eta_decay_factor)
    log = TrainLog(env_id, seed, cfg, eval_seed=eval_seed, nets=nets)
    baseline = cfg.algo == "projection"
    arm_cfg = cfg.train_arm
    lam_eval = np.asarray(cfg.eval_preference)
    t0 = time.perf_counter()
    losses_c: List[float] = []
    losses_p: List[float] = []

    def eval_row(step: int) -> MetricsRow:
        if evaluate:
            ret, rate, us = evaluate_policy(nets.policy, env_id, lam_eval, cfg.eval_episodes, seed=eval_seed, arm=cfg.eval_arm)
        else:
            ret = rate = us = float("nan")
        row = MetricsRow(
            step,
            1e3 * (time.perf_counter() - t0),
            ret,
            rate,
            log.qp_count,
            buf.eta,
            float(np.mean(losses_c)) if losses_c else float("nan"),
            float(np.mean(losses_p)) if losses_p else float("nan"),
            us,
        )
        losses_c.clear()
        losses_p.clear()
        return row

    if total_steps == 0:
        return log
    log.initial = eval_row(0)

    s = env.reset()
    lam = sample_preference(act_rng).as_array()
    n_updates = 0
    for t in range(1, total_steps + 1):
        rejected: list = []
        penalised = False
        if t <= cfg.warmup:
            a, rejected, projected = uniform_feasible(env, s, act_rng)
            log.qp_count += projected
            a_store = a
        elif baseline:
            a, penalised, a_store = projection_baseline_step(nets.policy, s, spec, act_rng, lam)
            log.qp_count += penalised
        else:
            res = arm_sample(nets.policy, s, spec, arm_cfg, act_rng, lam)
            a, rejected, a_store = res.action, res.rejected, res.action
            log.qp_count += res.fallback_used

        log.rejected_total += len(rejected)
        for a_bad in rejected[: cfg.max_rejected_stored]:
            buf.push_arrays(s.vector, a_bad, 0.0, -cfg.K, s.vector, False, lam, s.step_index, s.step_index)
            log.rejected_stored += 1

        s_next, r, done = env.step(a)
        r_scaled = rescale_reward(r, env.reward_range)
        terminal = done and s_next.step_index < env.horizon
        c = -cfg.K if penalised else 0.0
        # the baseline stores its raw sample with the penalty in the real buffer
        buf.d_r.append(s.vector, a_store, r_scaled, c, s_next.vector, terminal, lam, s.step_index, s_next.step_index)
        buf.tick_decay()
        log.env_steps += 1

        if done:
            s = env.reset()
            lam = sample_preference(act_rng).as_array()
        else:
            s = s_next

        if t > cfg.warmup:
            for _ in range(cfg.gradient_steps):
                batch = buf.sample_mixed(cfg.batch, upd_rng)
                if cfg.preference_per_sample:
                    lam_u = sample_preferences(upd_rng, cfg.batch)
                else:
                    lam_u = sample_preference(upd_rng).as_array()
                losses_c.append(critic_update(nets, batch, lam_u, cfg, upd_rng))
                losses_p.append(policy_update(nets, batch, lam_u, cfg, upd_rng))
                n_updates += 1
                if n_updates % cfg.target_update_interval == 0:
                    update_targets(nets.critic, cfg.tau)

        if t % cfg.eval_interval == 0:
            log.rows.append(eval_row(t))

    log.infeasible_env_calls = env.infeasible_calls
    if checkpoint_path is not None:
        save_nets(checkpoint_path, nets, env_id, cfg)
    return log


def save_nets(path, nets: Nets, env_id: str, cfg: TrainerConfig) -> None:
    c = nets.critic
    save_checkpoint(
        path,
        {"policy": nets.policy.trunk, "q1": c.nets[0], "q2": c.nets[1], "q1_target": c.targets[0], "q2_target": c.targets[1]},
        {"env_id": env_id, "alpha": cfg.alpha, "K": cfg.K, "hidden": list(cfg.hidden)},
    )


def load_policy(path) -> Tuple[GaussianPolicy, dict]:
    nets, meta = load_checkpoint(path)
    env = make(meta["env_id"])
    return GaussianPolicy(nets["policy"], env.action_low, env.action_high, env.obs_low, env.obs_high), meta
