"""Command-line entry point: ``cbplimit <command> --config FILE``.

Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 invariant
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import harness
from .config import load_config
from .errors import InvariantViolation, NumericError

log = logging.getLogger("cbplimit")

COMMANDS = {
    "simulate": (harness.run_simulation, "rescaled CBP and limit paths"),
    "converge": (harness.run_convergence_study, "generator gap and mechanism diagnostics"),
    "compare": (harness.run_distribution_comparison, "marginal laws against the limit"),
    "check": (harness.run_checks, "family moment and growth verifiers"),
    "monotone": (harness.run_monotone, "complete-monotonicity test of G_k"),
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbplimit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--seed", type=_u64, help="overrides [output] seed")
        p.add_argument("--out", help="CSV path; overrides [output] path")
        p.add_argument("--threads", type=_positive, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--quiet", action="store_true", help="only warnings and errors")
        p.add_argument("--plot", action="store_true", help="also write PNG figures next to the CSV")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        out = args.out or cfg.output
        if not out:
            log.error("no output path: pass --out or set [output] path")
            return 1
        fn, _ = COMMANDS[args.command]
        report = fn(cfg, threads=args.threads)
        harness.write_csv(report, out)
        log.info("wrote %d rows to %s (config %s)", len(report.rows), out, cfg.config_hash())
        if args.plot and args.command in _plotters():
            for path in _plotters()[args.command](report, out):
                log.info("wrote figure %s", path)
        if not report.ok:
            log.error("invariant violation: %s", report.message)
            return 3
        return 0
    except InvariantViolation as exc:
        log.error("invariant violation: %s", exc)
        return 3
    except (NumericError, ArithmeticError) as exc:
        log.error("numeric failure: %s", exc)
        return 2
    except ValueError as exc:
        log.error("%s", exc)
        return 1


def _plotters() -> dict:
    from .plotting import PLOTTERS

    return PLOTTERS


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
