"""Worst identity residuals over a range of random scenarios."""

import argparse
import time

import numpy as np

from emdtn.checks import identity_report
from emdtn.scenario import random_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--order", type=int, default=5)
    ap.add_argument("--depth", type=int, default=5)
    args = ap.parse_args()

    worst = {}
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        s = random_scenario(seed, order=args.order, depth=args.depth)
        for k, v in identity_report(s, np.random.default_rng(seed)).items():
            if v >= worst.get(k, (-1.0, None))[0]:
                worst[k] = (v, seed)
    for k, (v, seed) in worst.items():
        print(f"{k:24s} {v:.3e}  (seed {seed})")
    print(f"{args.seeds} scenarios in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
