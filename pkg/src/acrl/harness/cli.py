"""``acrl`` command line: train, eval, verify-prop1, bench-arm, sweep."""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import stats

from acrl.arm import ArmConfig, Fallback, arm_sample
from acrl.constraints import feasible_rows
from acrl.envs import make
from acrl.harness.config import SEED_ENV, ConfigError, load
from acrl.harness.metrics import EVAL_PREFERENCE, evaluate_policy, write_csv
from acrl.mosac import TrainingAborted, load_policy, train
from acrl.nn import GaussianPolicy
from acrl.tabular import verify_prop1

EXIT_OK, EXIT_ABORT, EXIT_CONFIG = 0, 1, 2


def _seed(value: Optional[int]) -> int:
    if value is not None:
        return value
    return int(os.environ.get(SEED_ENV, "0"))


def _train_flags(args) -> dict:
    flags = {
        "env_id": args.env,
        "algo": args.algo,
        "seed": None if args.seed is None else str(args.seed),
        "total_steps": None if args.steps is None else str(args.steps),
        "eval_interval": None if args.eval_interval is None else str(args.eval_interval),
        "eval_episodes": None if args.eval_episodes is None else str(args.eval_episodes),
        "metrics_path": args.metrics,
        "checkpoint_path": args.checkpoint,
        "profile": args.profile,
    }
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = v
    return flags


def run(config_path: Optional[str], flags: Optional[dict] = None, out=None) -> int:
    """Train per the config; write metrics CSV and checkpoint. Returns the exit code."""
    try:
        cfg = load(config_path, flags)
        trainer = cfg.trainer()
    except ConfigError as e:
        print(f"acrl: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for path in (cfg.metrics_path, cfg.checkpoint_path):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    try:
        log = train(cfg.env_id, trainer, cfg.seed, cfg.total_steps, checkpoint_path=cfg.checkpoint_path)
    except TrainingAborted as e:
        print(f"acrl: training aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    with open(cfg.metrics_path, "w", newline="") as fh:
        write_csv(log.rows, fh)
    final = log.final
    summary = {
        "env": cfg.env_id,
        "algo": cfg.algo,
        "seed": cfg.seed,
        "steps": cfg.total_steps,
        "rows": len(log.rows),
        "qp_count": log.qp_count,
        "infeasible_env_calls": log.infeasible_env_calls,
        "final_valid_rate": None if final is None else final.valid_action_rate,
        "final_return": None if final is None else final.eval_return,
        "metrics": cfg.metrics_path,
    }
    print(json.dumps(summary), file=out or sys.stdout)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        flags = _train_flags(args)
    except ConfigError as e:
        print(f"acrl: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.config, flags)


def cmd_eval(args) -> int:
    try:
        if args.checkpoint:
            policy, meta = load_policy(args.checkpoint)
            env_id = meta["env_id"]
        else:
            if not args.env:
                raise ConfigError("eval needs --checkpoint or --env")
            env_id = args.env
            policy = None if args.random else GaussianPolicy.init(make(env_id), (64, 64), np.random.default_rng(_seed(args.seed)))
        lam = tuple(float(x) for x in args.lam.split(","))
        if len(lam) != 2:
            raise ConfigError("--lam expects two comma-separated weights")
    except (ConfigError, OSError, ValueError, KeyError) as e:
        print(f"acrl: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    ret, rate, us = evaluate_policy(policy, env_id, lam, args.episodes, seed=_seed(args.seed))
    print(json.dumps({"env": env_id, "return": ret, "valid_rate": rate, "inference_us": us}))
    return EXIT_OK


def cmd_verify(args) -> int:
    ok = True
    for rep in verify_prop1(_seed(args.seed), args.instances, args.tol):
        ok &= rep.ok
        print(rep.to_json())
    return EXIT_OK if ok else EXIT_ABORT


def cmd_bench_arm(args) -> int:
    """Acceptance rate of ARM under a fresh policy, and a KS check of its
    accepted actions against filtered i.i.d. draws from the same policy."""
    try:
        env = make(args.env, seed=_seed(args.seed))
    except KeyError as e:
        print(f"acrl: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(_seed(args.seed))
    policy = GaussianPolicy.init(env, (64, 64), rng)
    s = env.reset()
    lam = np.asarray(EVAL_PREFERENCE)
    cfg = ArmConfig(max_attempts=args.max_attempts, fallback=Fallback.PROJECT)
    acc, attempts, fallbacks = [], 0, 0
    for _ in range(args.samples):
        res = arm_sample(policy, s, env.constraint, cfg, rng, lam)
        attempts += res.attempts
        fallbacks += res.fallback_used
        if not res.fallback_used:
            acc.append(res.action)
    acc = np.array(acc)
    ref = []
    while sum(len(r) for r in ref) < max(len(acc), 1):
        A, _ = policy.sample(s.vector, lam, rng, n=4096)
        ref.append(A[feasible_rows(env.constraint, s, A)])
    ref = np.concatenate(ref)
    out = {
        "env": args.env,
        "samples": args.samples,
        "acceptance_rate": (args.samples - fallbacks) / attempts,
        "fallbacks": fallbacks,
        "ks": [],
    }
    if len(acc):
        for j in range(acc.shape[1]):
            ks = stats.ks_2samp(acc[:, j], ref[:, j])
            out["ks"].append({"dim": j, "statistic": float(ks.statistic), "pvalue": float(ks.pvalue)})
    print(json.dumps(out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    seeds = [int(x) for x in args.seeds.split(",")]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    procs, codes = [], []
    for sd in seeds:
        cmd = [sys.executable, "-m", "acrl.harness.cli", "train", "--env", args.env, "--algo", args.algo, "--seed", str(sd)]
        cmd += ["--metrics", str(outdir / f"metrics_seed{sd}.csv"), "--checkpoint", str(outdir / f"checkpoint_seed{sd}.bin")]
        if args.steps is not None:
            cmd += ["--steps", str(args.steps)]
        if args.config:
            cmd += ["--config", args.config]
        for item in args.set or []:
            cmd += ["--set", item]
        procs.append(subprocess.Popen(cmd))
        if len(procs) >= args.jobs:
            codes.append(procs.pop(0).wait())
    codes += [p.wait() for p in procs]
    return max(codes, default=EXIT_OK)


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acrl", description="Action-constrained RL toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train ARAM or the projection baseline")
    t.add_argument("--config")
    t.add_argument("--env")
    t.add_argument("--algo")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--eval-episodes", type=int)
    t.add_argument("--metrics")
    t.add_argument("--checkpoint")
    t.add_argument("--profile")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="trainer override, repeatable")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (or a fresh/random policy)")
    e.add_argument("--checkpoint")
    e.add_argument("--env")
    e.add_argument("--random", action="store_true", help="uniform feasible policy")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int)
    e.add_argument("--lam", default=",".join(str(x) for x in EVAL_PREFERENCE))
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify-prop1", help="brute-force check of the augmentation on random tabular MDPs")
    v.add_argument("--instances", type=int, default=50)
    v.add_argument("--seed", type=int)
    v.add_argument("--tol", type=float, default=1e-10)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench-arm", help="ARM acceptance rate and KS statistics for a fresh policy")
    b.add_argument("--env", required=True)
    b.add_argument("--samples", type=int, default=2000)
    b.add_argument("--max-attempts", type=int, default=100)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench_arm)

    w = sub.add_parser("sweep", help="train several seeds as separate processes")
    w.add_argument("--env", required=True)
    w.add_argument("--algo", default="aram")
    w.add_argument("--seeds", default="0,1,2,3,4")
    w.add_argument("--steps", type=int)
    w.add_argument("--config")
    w.add_argument("--outdir", default="sweep")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--set", action="append", metavar="KEY=VALUE")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
