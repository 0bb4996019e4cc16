"""Birkhoff tail-mean noise floor for i.i.d. steps, next to a direct simulation.

The floor is the variance of the tail mean of running averages when the
per-step values are independent with the variance of exp(-N), N ~ Poisson(1).
"""
import argparse

import numpy as np

from poisson_suspensions.stats import birkhoff_tail_noise_floor, limit_dispersion


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--tail", type=float, default=0.5)
    ap.add_argument("--seeds", type=int, default=2000)
    args = ap.parse_args(argv)
    var = float(np.exp(np.exp(-2) - 1) - np.exp(2 * (np.exp(-1) - 1)))
    floor = birkhoff_tail_noise_floor(args.steps, args.tail, var)
    rng = np.random.default_rng(1)
    k = np.arange(1, args.steps + 1)
    trajs = [np.cumsum(np.exp(-rng.poisson(1.0, args.steps))) / k for _ in range(args.seeds)]
    across, _ = limit_dispersion(trajs, args.tail)
    print(f"step variance {var:.6f}")
    print(f"noise floor   {floor:.4e}")
    print(f"simulated     {across:.4e}  ({args.seeds} i.i.d. trajectories)")


if __name__ == "__main__":
    main()
