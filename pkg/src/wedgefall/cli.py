"""``wedgefall <experiment> ...`` entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical budget exhausted.
"""
from __future__ import annotations

import argparse
import sys

from wedgefall.config import EXPERIMENTS, FORMATS, POLICIES, ConfigError, load_config
from wedgefall.dynamics import RejectionBudgetError
from wedgefall.experiments import BudgetExhausted, run
from wedgefall.results import emit

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wedgefall", description="Falling-balls experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML file; command-line values override it")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--masses", help="m1,m2,m3")
    g.add_argument("--special", help="m1,m2; m3 solved from the special mass condition")
    p.add_argument("--energy", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--out")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other config key")
    return p


def _overrides(ns: argparse.Namespace) -> dict:
    ov = {k: getattr(ns, k) for k in ("masses", "special", "energy", "seed", "samples", "horizon", "policy", "out", "format")}
    ov["experiment"] = ns.experiment
    for item in ns.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        ov[key.strip().replace("-", "_")] = value.strip()
    return ov


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(ns.config, _overrides(ns))
        table = run(cfg)
    except ConfigError as exc:
        print(f"wedgefall: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetExhausted, RejectionBudgetError) as exc:
        print(f"wedgefall: numerical budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    paths = emit(table, cfg.out, cfg.format)
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
