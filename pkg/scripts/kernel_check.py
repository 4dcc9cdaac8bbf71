"""Compare the closed-form trace kernels with the forward engine.

Bumps one normal layer of a constant inverse metric and differences the trace
of the matching slot of L; the result should be (2w)^-(m+1) xi.K.xi.
"""

import argparse
from math import factorial

import numpy as np

from emdtn.dtn import dtn_symbols
from emdtn.geometry import BoundaryMetricJet
from emdtn.jets import Jet3
from emdtn.recon import trace_form
from emdtn.scenario import Scenario


def bumped(u0, H, m, eps, n, omega=1.3, mu=1.1, sigma=0.9 + 0.2j):
    bump = Jet3.var(3, n) ** m * (eps / factorial(m))
    u = [Jet3.const(u0[i, j], n) + bump * H[i, j] for i, j in ((0, 0), (0, 1), (1, 1))]
    return Scenario(omega, BoundaryMetricJet.from_upper(*u), Jet3.const(mu, n), Jet3.const(sigma, n), n, m + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-order", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    a = rng.normal(size=(2, 2)) * 0.3
    u0 = np.eye(2) + a @ a.T
    H = rng.normal(size=(2, 2))
    H = 0.5 * (H + H.T)
    n = args.max_order + 2
    for m in range(1, args.max_order + 1):
        la = dtn_symbols(bumped(u0, H, m, 1.0, n)).L[1 - m]
        lb = dtn_symbols(bumped(u0, H, m, 0.0, n)).L[1 - m]
        K = trace_form(H[:, :, None].astype(complex), np.linalg.inv(u0)[:, :, None].astype(complex),
                       u0[:, :, None].astype(complex), m)[:, :, 0]
        worst = 0.0
        for _ in range(5):
            xi = rng.normal(size=2)
            got = np.trace(la.evaluate(xi) - lb.evaluate(xi))
            want = (2 * np.sqrt(xi @ u0 @ xi)) ** (-(m + 1)) * (xi @ K @ xi)
            worst = max(worst, abs(got - want) / abs(want))
        print(f"order {m}: max relative gap {worst:.2e}")


if __name__ == "__main__":
    main()
