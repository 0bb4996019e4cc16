"""Run every bundled experiment and print a one-line verdict per config.

    python scripts/run_all_experiments.py --replicas 0.05 --out results
"""
import argparse
import json
import sys
import time
from pathlib import Path

from poisson_suspensions.cli.main import EXIT_OK, bundled_configs, run_experiment
from poisson_suspensions.errors import ConfigError, RuntimeBudgetExceeded, WindowBlowup


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicas", type=float, default=1.0, help="replica multiplier")
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config names to run (default all)")
    args = ap.parse_args(argv)
    worst = EXIT_OK
    rows = []
    for path in bundled_configs():
        if args.only and path.stem not in args.only:
            continue
        t0 = time.perf_counter()
        try:
            code, _ = run_experiment(path, replica_scale=args.replicas,
                                     out=Path(args.out) / path.stem, threads=args.threads)
        except ConfigError:
            code = 2
        except (RuntimeBudgetExceeded, WindowBlowup):
            code = 3
        dt = time.perf_counter() - t0
        worst = max(worst, code)
        rows.append({"name": path.stem, "exit": code, "seconds": round(dt, 2)})
        print(f"{'PASS' if code == 0 else 'FAIL'} {path.stem:<22} exit={code} {dt:7.1f}s", flush=True)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "timings.json").write_text(json.dumps(rows, indent=2) + "\n")
    return worst


if __name__ == "__main__":
    sys.exit(main())
