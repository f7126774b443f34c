"""Taylor-approximated C1/C2 against Monte Carlo at the reference operating point.

Prints the worst entry-wise relative error for the verbatim second-order
weight and for the 1/2 weight at several turn-rate standard deviations.

    python scripts/taylor_weight_study.py [--samples 10000000] [--seed 0]
"""
import argparse

import numpy as np

from etrack import oracles


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=10_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stds", type=float, nargs="+", default=[2.0, 5.0, 10.0, 15.0, 20.0])
    args = ap.parse_args()
    print("std_deg  verbatim_err  half_err")
    for std in args.stds:
        # same Monte-Carlo draws for both variants
        errs = [
            max(oracles.taylor_errors(std, args.samples, np.random.default_rng(args.seed), half))
            for half in (False, True)
        ]
        print(f"{std:7.1f}  {errs[0]:12.4%}  {errs[1]:8.4%}")


if __name__ == "__main__":
    main()
