"""Parity hard instance: value of subset-tracking max-player policies against the noisy
parity opponent, estimated by Monte Carlo. Only the true subset earns 1 - noise; every
other subset earns 1/2.
"""

import argparse
import itertools
import sys

from mgvl.cli import csv_text
from mgvl.envgen import (ParityOpponent, ParityOpponentSpec, parity_hard_instance,
                         subset_policy)
from mgvl.evalx import mc_value


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--H", type=int, default=6)
    p.add_argument("--T", default="2|4")
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--max-size", type=int, default=2, help="largest candidate subset size")
    args = p.parse_args()
    T = tuple(int(x) for x in args.T.split("|"))
    game = parity_hard_instance(args.H)
    rows = []
    for size in range(1, args.max_size + 1):
        for cand in itertools.combinations(range(1, args.H), size):
            choice = subset_policy(args.H, cand).probs[0].argmax(-1)
            opp = ParityOpponent(ParityOpponentSpec(args.H, T, args.noise, seed=0))
            mean, se = mc_value(game, lambda e, h, s, rng: (int(choice[h, s]),
                                                            opp(e + 1, h, s)), args.n)
            rows.append(["|".join(map(str, cand)), int(cand == T), mean[0], se[0]])
    sys.stdout.write(csv_text(("subset", "is_true", "value", "stderr"), rows))


if __name__ == "__main__":
    main()
