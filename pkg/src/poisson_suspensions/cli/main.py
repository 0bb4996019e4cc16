"""``psusp`` command line: run bundled or custom experiments, list the catalog.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 config error,
3 runtime or window budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

from ..errors import ConfigError, InsufficientReplicas, RuntimeBudgetExceeded, WindowBlowup
from .config import SCHEMA_VERSION, ExperimentConfig, load_config
from .runners import RUNNERS, RunContext, RunResult

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3
THREADS_ENV = "PSUSP_THREADS"


def bundled_dir() -> Path:
    return Path(str(resources.files("poisson_suspensions") / "experiments"))


def bundled_configs() -> list[Path]:
    return sorted(bundled_dir().glob("*.toml"))


def resolve_config(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = bundled_dir() / (name_or_path if name_or_path.endswith(".toml") else name_or_path + ".toml")
    if cand.exists():
        return cand
    raise ConfigError(f"no config at {name_or_path!r} and no bundled experiment of that name")


def list_experiments() -> list[dict]:
    out = []
    for path in bundled_configs():
        cfg = load_config(path)
        out.append({"name": cfg.name, "kind": cfg.kind, "title": cfg.raw.get("title", ""),
                    "anchor": cfg.raw.get("anchor", ""), "file": path.name})
    return sorted(out, key=lambda e: e["name"])


def _write_csv(path: Path, table) -> None:
    header, rows = table
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["schema_version", SCHEMA_VERSION])
        w.writerow(header)
        w.writerows(rows)


def write_outputs(result: RunResult, cfg: ExperimentConfig, ctx: RunContext, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "reports.jsonl").open("w") as fh:
        for r in result.reports:
            d = r.to_dict()
            d["schema_version"] = SCHEMA_VERSION
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    for name, table in sorted(result.tables.items()):
        _write_csv(out_dir / name, table)
    for name, doc in sorted(result.documents.items()):
        (out_dir / name).write_text(json.dumps({"schema_version": SCHEMA_VERSION, "data": doc},
                                               sort_keys=True, indent=2) + "\n")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "kind": cfg.kind,
        "anchor": cfg.raw.get("anchor", ""),
        "seed": ctx.seed,
        "replica_scale": ctx.replica_scale,
        "passed": all(r.passed for r in result.reports),
        "assertions": [{"name": r.name, "passed": r.passed} for r in result.reports],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def run_experiment(config, *, seed: int | None = None, replica_scale: float = 1.0,
                   out: Path | str | None = None, threads: int = 1) -> tuple[int, dict | None]:
    """Run one experiment and write its outputs; returns ``(exit_code, summary)``."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if not replica_scale > 0:
        raise ConfigError("--replicas must be a positive multiplier")
    ctx = RunContext(cfg, cfg.seed if seed is None else int(seed), replica_scale, max(1, threads))
    out_dir = Path(out) if out is not None else Path("results") / cfg.name
    start = time.perf_counter()
    try:
        result = RUNNERS[cfg.kind](ctx)
    except InsufficientReplicas as e:
        raise ConfigError(str(e)) from e
    elapsed = time.perf_counter() - start
    summary = write_outputs(result, cfg, ctx, out_dir)
    if elapsed > cfg.runtime_budget_s:
        raise RuntimeBudgetExceeded(f"{cfg.name} took {elapsed:.1f}s > budget {cfg.runtime_budget_s}s")
    return (EXIT_OK if summary["passed"] else EXIT_FAIL), summary


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psusp", description="Poisson suspension experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config (path or bundled name)")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--replicas", type=float, default=1.0, help="multiplier on replica counts")
    r.add_argument("--out", default=None, help="output directory (default results/<name>)")
    r.add_argument("--threads", type=int, default=_default_threads(),
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    sub.add_parser("list", help="print the bundled experiment catalog as JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        try:
            print(json.dumps(list_experiments(), indent=2, sort_keys=True))
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        code, summary = run_experiment(resolve_config(args.config), seed=args.seed,
                                       replica_scale=args.replicas, out=args.out, threads=args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeBudgetExceeded, WindowBlowup) as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    for a in summary["assertions"]:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
