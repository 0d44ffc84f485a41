"""Time each numba kernel against its numpy twin on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both twins are imported from ``acrl.kernels`` directly, so the
``ACRL_DISABLE_NUMBA`` flag does not matter here. The first numba call
(compilation or cache load) is excluded from the timings.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from acrl import kernels as k
from acrl.envs.nsfnet import ROUTING
from acrl.tabular import random_mdp


def cases(rng):
    A2 = rng.uniform(-1, 1, (4096, 2))
    A9 = rng.uniform(0, 50, (4096, 9))
    A3 = rng.uniform(0, 40, (4096, 3))
    w = rng.uniform(0.5, 2.0, 5)
    A5 = rng.normal(0, 3, (4096, 5))
    G = np.ascontiguousarray(ROUTING)
    h = np.full(G.shape[0], 50.0)
    a = rng.uniform(0, 50, 9)
    lo, hi = np.zeros(9), np.full(9, 50.0)
    m = random_mdp(rng, 8, 6, 0.99)
    mask = m.feasible.astype(np.bool_)
    return {
        "ball_rows 4096x2": ("ball_rows", (A2, 0.05)),
        "box_rows 4096x9": ("box_rows", (A9, lo, hi)),
        "wabs_rows 4096x5": ("wabs_rows", (A5, w, 10.0)),
        "ppos_rows 4096x5": ("ppos_rows", (A5, w, 10.0)),
        "band_rows 4096x3": ("band_rows", (A3, 90.0, 5.0, 40.0)),
        "linear_rows 4096x9": ("linear_rows", (A9, G, h)),
        "dykstra_poly nsfnet": ("dykstra_poly", (a, G, h, lo, hi, 10000, 1e-9)),
        "value_iteration 8x6": ("value_iteration", (m.P, m.R, mask, m.gamma, 1e-10, 200000)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for label, (name, argv) in cases(rng).items():
        f_nb = getattr(k, f"_{name}_nb")
        f_np = getattr(k, f"_{name}_np")
        f_nb(*argv)  # compile / load from cache
        t_np = min(timeit.repeat(lambda: f_np(*argv), number=args.repeat, repeat=3)) / args.repeat
        t_nb = min(timeit.repeat(lambda: f_nb(*argv), number=args.repeat, repeat=3)) / args.repeat
        print(f"{label:<24}{1e6 * t_np:>12.1f}{1e6 * t_nb:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
