"""Audited alpha-weighted regret of the two bandit learners against three adversaries.

For every (learner, B, H, adversary) cell, prints the fraction of seeds whose audited
regret is within the theoretical profile at t in {100, 1000, 5000}, plus the median
regret and the profile value.
"""

import argparse
import itertools
import sys

import numpy as np

from mgvl.bandit import (ADVERSARIES, audit_weighted_regret, external_iota, ftrl_xi,
                         simulate_bandit, swap_iota, swap_xi)
from mgvl.cli import csv_text


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--T", type=int, default=5000)
    p.add_argument("--delta", type=float, default=0.01)
    args = p.parse_args()
    times = [t for t in (100, 1000, 5000) if t <= args.T]
    rows = []
    for mode, B, H, adv in itertools.product(("external", "swap"), (2, 5), (1, 5), ADVERSARIES):
        th, lo = simulate_bandit(mode, B, H, args.T, adv, range(args.seeds))
        reg = audit_weighted_regret(th, lo, H, mode)
        for t in times:
            if mode == "external":
                bound = ftrl_xi(B, t, external_iota(B, args.delta), H)
            else:
                bound = swap_xi(B, t, swap_iota(B, args.delta), H)
            frac = float((reg[:, t - 1] <= bound).mean())
            rows.append([mode, B, H, adv, t, frac, float(np.median(reg[:, t - 1])), float(bound)])
    sys.stdout.write(csv_text(("learner", "B", "H", "adversary", "t", "within_bound",
                               "median_regret", "bound"), rows))


if __name__ == "__main__":
    main()
