"""Empirical size of the chi-square and correlation tests under their null.

Draws i.i.d. Poisson counts with numpy (independent of the package sampler),
runs each test many times at a fixed significance and reports the rejection
rate next to the nominal level.

    python scripts/calibrate_tests.py --runs 20000 --alpha 1e-2
"""
import argparse

import numpy as np

from poisson_suspensions.stats import chisq_poisson, independence_test


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=10000)
    ap.add_argument("--replicas", type=int, default=1000)
    ap.add_argument("--alpha", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    for mean in (0.5, 2.0, 10.0):
        rej = sum(not chisq_poisson(rng.poisson(mean, args.replicas), mean, args.alpha).passed
                  for _ in range(args.runs))
        print(f"chisq mean={mean:<5} rejection rate {rej / args.runs:.4f} (nominal {args.alpha})")
    rej = sum(not independence_test(rng.poisson(1.5, (args.replicas, 2)), args.alpha).passed
              for _ in range(args.runs))
    print(f"independence      rejection rate {rej / args.runs:.4f} (nominal {args.alpha})")


if __name__ == "__main__":
    main()
