"""Command line entry point: ``fracpme {verify,solve,sweep,compare} --config C --out D``."""
from __future__ import annotations

import argparse
import sys

from ..errors import FracPMEError, StepError
from .config import VERBS, ConfigError, load_config
from .runner import run
from .suites import SUITES

EXIT_PASS = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracpme", description=__doc__)
    ap.add_argument("--list-suites", action="store_true", help="list experiment kinds and exit")
    sub = ap.add_subparsers(dest="verb")
    for verb, kinds in VERBS.items():
        sp = sub.add_parser(verb, help=f"run {' / '.join(kinds)} experiment")
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--out", default=".", help="directory for the CSV (default: .)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list_suites:
        for verb, kinds in VERBS.items():
            for kind in kinds:
                print(f"{verb:8s} {kind:17s} {SUITES[kind][1]}")
        return EXIT_PASS
    if args.verb is None:
        ap.print_usage(sys.stderr)
        print("fracpme: error: a verb is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"fracpme: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.kind not in VERBS[args.verb]:
        print(
            f"fracpme: experiment kind {cfg.kind!r} is not run by '{args.verb}' "
            f"(expected one of {', '.join(VERBS[args.verb])})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        result = run(cfg, args.out)
    except ConfigError as exc:
        print(f"fracpme: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StepError, FracPMEError, ArithmeticError) as exc:
        print(f"fracpme: experiment {cfg.id}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(result.summary())
    if result.path is not None:
        print(f"wrote {result.path}")
    return EXIT_PASS if result.passed else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
