"""Command line entry point.

Each subcommand reads a YAML run config and works inside ``--out``::

    surprise-filter collect   --config run.yaml --out runs/a --seed 0
    surprise-filter fit       --config run.yaml --out runs/a --seed 0
    surprise-filter calibrate --config run.yaml --out runs/a --seed 0
    surprise-filter eval      --config run.yaml --out runs/a --seed 0
    surprise-filter compare   --config run.yaml --out runs/a --seed 0
    surprise-filter sweep     --config run.yaml --out runs/b --seed 0

Exit codes: 0 success, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .harness import runner
from .harness.config import RunConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("surprise_filter")


def _collect(cfg, out):
    path = runner.run_collect(cfg, out)
    log.info("wrote %s", path)


def _fit(cfg, out):
    models = runner.run_fit(cfg, out)
    log.info("fitted %s", ", ".join(sorted(models)))


def _calibrate(cfg, out):
    gate = runner.run_calibrate(cfg, out)
    log.info("tau=%r tau_d=%r", gate.tau, gate.tau_d)


def _eval(cfg, out):
    rows = runner.run_eval(cfg, out)
    log.info("wrote %d metric rows", len(rows))


def _compare(cfg, out):
    for r in runner.run_compare(cfg, out):
        log.info("%s: median gap %.4f, agreement %.3f, %d vs %d evaluations",
                 r.kind, r.gap_median, r.agreement, r.greedy_evals, r.brute_evals)


def _sweep(cfg, out):
    rows = runner.run_sweep(cfg, out)
    log.info("wrote %d metric rows", len(rows))


COMMANDS = {
    "collect": _collect,
    "fit": _fit,
    "calibrate": _calibrate,
    "eval": _eval,
    "compare": _compare,
    "sweep": _sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="surprise-filter", description="Surprise-guided sensor filtering experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run config")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        s.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg: RunConfig = load_config(args.config).with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # every other failure is a runtime error for the exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
