"""Nash Q-learning gap trace (1/k) sum (V_up - V_low)(s_1) at checkpoints, for several
bonus scales c. Also reports the fraction of table entries with V_up >= V* >= V_low.
"""

import argparse
import sys

from mgvl.cli import csv_text
from mgvl.envgen import RandomGameSpec, random_game
from mgvl.evalx import nash_values_zero_sum
from mgvl.nashq import NashQConfig, train_nashq


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--K", type=int, default=30_000)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--c", default="1.0,0.3,0.1", help="comma-separated bonus scales")
    args = p.parse_args()
    cs = [float(x) for x in args.c.split(",")]
    cps = tuple(args.K * j // 8 for j in range(1, 9))
    rows = []
    for seed in range(args.seeds):
        game = random_game(RandomGameSpec(num_states=4, horizon=3, seed=seed))
        Vstar = nash_values_zero_sum(game).V
        for c in cs:
            res = train_nashq(game, NashQConfig(K=args.K, seed=seed, c=c, checkpoints=cps), Vstar)
            frac = res.diagnostics.sandwich_fraction()
            for r in res.diagnostics.rows:
                rows.append([seed, c, r["episode"], r["gap_trace"], r["sandwich_violations"], frac])
            print(f"seed {seed} c {c} done", file=sys.stderr)
    sys.stdout.write(csv_text(("seed", "c", "K", "gap_trace", "sandwich_violations",
                               "sandwich_fraction"), rows))


if __name__ == "__main__":
    main()
