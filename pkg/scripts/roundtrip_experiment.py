"""Forward symbols then layer stripping, both modes, over many seeds.

Prints the worst relative error per normal order and the seeds that failed.
"""

import argparse
import time
from collections import defaultdict

from emdtn.errors import EmdtnError
from emdtn.recon import MeasuredSymbols, layer_errors, reconstruct
from emdtn.scenario import random_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--order", type=int, default=6)
    ap.add_argument("--depth", type=int, default=5)
    ap.add_argument("--sigma-boundary", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    for mode in ("metric", "parameter"):
        worst = defaultdict(float)
        failed = []
        t0 = time.perf_counter()
        for seed in range(args.seeds):
            truth = random_scenario(seed, order=args.order, depth=args.depth)
            known = {"mu": truth.mu, "sigma": truth.sigma} if mode == "metric" else {"metric": truth.metric}
            if mode == "parameter" and args.sigma_boundary:
                known["sigma_boundary"] = truth.sigma.restrict_boundary()
            try:
                state = reconstruct(MeasuredSymbols.from_scenario(truth), mode, jobs=args.jobs, **known)
            except EmdtnError as exc:
                failed.append((seed, f"{type(exc).__name__}: {exc}"))
                state = getattr(exc, "state", None)
                if state is None:
                    continue
            for m, err in layer_errors(state, truth).items():
                worst[m] = max(worst[m], err)
        print(f"{mode}: {time.perf_counter() - t0:.1f}s")
        for m in sorted(worst):
            print(f"  order {m}: max rel err {worst[m]:.3e}")
        for seed, why in failed:
            print(f"  seed {seed} failed: {why}")


if __name__ == "__main__":
    main()
