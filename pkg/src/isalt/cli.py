"""Command-line entry point ``isalt``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 missing or corrupted artifact.
"""

import argparse
import json
import logging
import sys

from . import experiment
from .config import load_config
from .exceptions import (BlowUp, ConfigError, DatasetFormatError, IsaltError, MissingArtifact)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4


def _add_config_args(p):
    p.add_argument("-c", "--config", help="TOML experiment config")
    p.add_argument("--preset", choices=["desk", "paper"], help="built-in scale preset")
    p.add_argument("--system", help="benchmark id for --preset without a config file")


def build_parser():
    parser = argparse.ArgumentParser(prog="isalt", description=(
        "Learn large-time-step schemes for ergodic SDEs from fine-step data."))
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="reference trajectory and one dataset per gap")
    _add_config_args(p)
    p = sub.add_parser("infer", help="fit every family at every gap")
    _add_config_args(p)
    p = sub.add_parser("simulate", help="run a saved scheme")
    p.add_argument("-s", "--scheme", required=True, help="scheme JSON written by 'infer'")
    p.add_argument("-n", "--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="output dataset file (.bin)")
    p.add_argument("--x0", type=float, nargs="+", help="initial state (default: system's)")
    p.add_argument("-M", "--members", type=int, help="ensemble size")
    p.add_argument("--record-every", type=int, default=1)
    p = sub.add_parser("evaluate", help="simulate schemes and compare statistics")
    _add_config_args(p)
    p = sub.add_parser("study", help="convergence, residual-order or blow-up studies")
    p.add_argument("kind", choices=sorted(experiment.STUDIES))
    _add_config_args(p)
    p = sub.add_parser("report", help="aggregate summaries into report.json")
    _add_config_args(p)
    return parser


def _config(args):
    if args.config is None and args.preset is None:
        raise ConfigError("give -c CONFIG or --preset")
    return load_config(args.config, args.preset, args.system)


def run(args):
    cmd = args.command
    if cmd == "simulate":
        if args.steps < 1:
            raise ConfigError("--steps must be >= 1")
        return experiment.cmd_simulate(args.scheme, args.steps, args.seed, args.output,
                                       args.x0, args.members, args.record_every)
    cfg = _config(args)
    if cmd == "gen-data":
        return experiment.cmd_gen_data(cfg)
    if cmd == "infer":
        return experiment.cmd_infer(cfg)
    if cmd == "evaluate":
        return experiment.cmd_evaluate(cfg)
    if cmd == "study":
        return experiment.cmd_study(cfg, args.kind)
    return experiment.cmd_report(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except (MissingArtifact, DatasetFormatError, FileNotFoundError) as exc:
        print(f"isalt: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"isalt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUp as exc:
        print(f"isalt: reference generation blew up: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IsaltError as exc:
        print(f"isalt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"isalt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    json.dump(result, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
