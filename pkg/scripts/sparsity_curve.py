#!/usr/bin/env python3
"""Sparsity as a function of beta on Gaussian weights, measured vs analytic.

For W ~ N(0, sigma^2) the zero fraction after thresholding is
2*Phi(beta*sqrt(2/pi)) - 1, independent of sigma. The measured column runs
the real pipeline on sampled weights; the analytic column evaluates the
closed form. Trained-network weights are not Gaussian, so their curves
differ — this script characterizes the rule itself.

    python scripts/sparsity_curve.py --betas 0.5,0.75,1,1.5,2,2.5,3
"""

import argparse
import math
import sys

from ternkit.rng import Rng
from ternkit.tensor import gaussian_fill
from ternkit.ternary import beta_sweep


def analytic_sparsity(beta: float) -> float:
    return math.erf(beta * math.sqrt(2.0 / math.pi) / math.sqrt(2.0))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--betas", type=str, default="0.5,0.75,1,1.5,2,2.5,3")
    ap.add_argument("--side", type=int, default=1000,
                    help="sample matrix is side x side")
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    betas = [float(b) for b in args.betas.split(",")]
    w = gaussian_fill(Rng(args.seed), args.side, args.side, args.sigma)
    rows = beta_sweep(w, betas)

    print(f"{'beta':>6} {'gamma':>10} {'measured':>9} {'analytic':>9} {'diff':>8}")
    for r in rows:
        a = analytic_sparsity(r.beta)
        print(f"{r.beta:>6.3g} {r.gamma:>10.5f} {r.sparsity:>9.4f} "
              f"{a:>9.4f} {r.sparsity - a:>+8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
