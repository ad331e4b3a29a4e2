"""Command line: ``kramers-lab run``, ``verify-all`` and ``print-defaults``.

Exit codes: 0 success, 1 failed assertion, 2 configuration error,
3 numerical or runtime failure.  ``KRAMERS_LAB_OUTPUT`` overrides the
output directory of any configuration.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import EXPERIMENTS, load_config, render_defaults
from .errors import ConfigError, KramersLabError
from .experiments import run_experiment, verify_all_config

OUTPUT_ENV = "KRAMERS_LAB_OUTPUT"
EXIT_OK, EXIT_ASSERTION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kramers-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kramers-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config", help="path to the experiment file")
    verify = sub.add_parser("verify-all", help="run the full verification battery")
    verify.add_argument("--catalog", help="restrict the battery to one catalog entry")
    verify.add_argument("--config", help="verify-all config file (seed, npaths, output_dir)")
    defaults = sub.add_parser("print-defaults", help="print every default configuration")
    defaults.add_argument("--experiment", choices=EXPERIMENTS, help="print only this experiment")
    return parser


def _with_env_output(cfg):
    override = os.environ.get(OUTPUT_ENV)
    return cfg.with_output_dir(override) if override else cfg


def _execute(cfg) -> int:
    result = run_experiment(_with_env_output(cfg))
    sys.stdout.write(result.report)
    if result.error is not None:
        print(f"kramers-lab: {type(result.error).__name__}: {result.error}", file=sys.stderr)
    elif result.failed:
        print(f"kramers-lab: assertion failed: {result.failed[0].describe()}", file=sys.stderr)
    return result.exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "print-defaults":
            sys.stdout.write(render_defaults(args.experiment))
            return EXIT_OK
        if args.command == "run":
            return _execute(load_config(args.config))
        base = load_config(args.config) if args.config else None
        return _execute(verify_all_config(args.catalog, base))
    except ConfigError as exc:
        print(f"kramers-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KramersLabError, ArithmeticError, ValueError) as exc:
        print(f"kramers-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
