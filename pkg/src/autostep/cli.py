"""Command-line entry point: ``autostep {sample,sweep,tune,acceptance-profile,ksess}``."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from autostep import __version__, harness
from autostep.errors import ConfigurationError, DiagnosticError
from autostep.targets import target_names

EXIT_CONFIG = 2

COMMANDS = {
    "sample": harness.cmd_sample,
    "sweep": harness.cmd_sweep,
    "tune": harness.cmd_tune,
    "acceptance-profile": harness.cmd_acceptance_profile,
    "ksess": harness.cmd_ksess,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    # Defaults are None so that values from --config are only overridden when given.
    p.add_argument("--config", help="flat key = value file; flags override its entries")
    p.add_argument("--target", help=f"one of: {', '.join(target_names())}")
    p.add_argument("--sampler", help="autostep-rwmh, autostep-mala, autostep-hmc(L), fixed-rwmh, fixed-mala, fixed-hmc(L)")
    p.add_argument("--criterion", choices=["symmetric", "asymmetric"])
    p.add_argument("--theta0", type=harness._float_list, help="initial step size, or comma-separated list")
    p.add_argument("--iters", dest="iterations", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--ref", help="reference-sample CSV (header row, one column per coordinate)")
    p.add_argument("--alpha", help="gradient cost factor, or 'measure'")
    p.add_argument("--replicates", type=int)
    p.add_argument("--norms", type=harness._float_list, help="comma-separated norms (acceptance-profile)")
    p.add_argument("--batches", type=int, help="KSESS batch count")
    p.add_argument("--init", help="initial state: exact, zeros, or a scale s for N(0, s^2)")
    p.add_argument("--jobs", type=int, help="worker threads for sweep/tune cells")
    p.add_argument("--trace", help="trace CSV (ksess)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autostep", description="AutoStep MCMC experiments")
    parser.add_argument("--version", action="version", version=f"autostep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "run one chain; write trace.csv and summary.csv",
        "sweep": "autostep and fixed-step runs over a theta0 list; write sweep.csv",
        "tune": "round-based tuning; write history.csv, summary.csv and final-round traces",
        "acceptance-profile": "one-step acceptance at fixed norms; write profile.csv",
        "ksess": "KSESS of a trace file against a reference; write ksess.csv",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text))
    return parser


def load_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    file_values = {}
    if args.config:
        try:
            with open(args.config) as handle:
                file_values = harness.parse_config_text(handle.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from None
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    return harness.build_config(file_values, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except (ConfigurationError, DiagnosticError) as exc:
        print(f"autostep: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
