#!/usr/bin/env python3
"""
edgeselect CLI - Main command router with subcommands.

Provides a unified command-line interface for calibrating, selecting and evaluating
composite edge-inference models under a frame deadline.
"""

import argparse
import importlib
import sys

from edgeselect.version import __version__

COMMANDS = {
    "gen-data": ("gen_data", "Generate a synthetic score/size dataset"),
    "calibrate": ("calibrate", "Calibrate the threshold of every composite model"),
    "select": ("select", "Select a composite model from the deadline violation bounds"),
    "evaluate": ("evaluate", "Monte Carlo evaluation of schemes over an SNR grid"),
    "sweep": ("sweep", "Run split, calibration and evaluation from one config file"),
}


def main():
    """Main CLI entry point with subcommand routing."""
    parser = argparse.ArgumentParser(
        prog="edgeselect",
        description="Deadline-aware model selection with conformal risk control",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Commands:
  gen-data    Generate a synthetic score/size dataset
  calibrate   Calibrate the threshold of every composite model
  select      Select a composite model from the deadline violation bounds
  evaluate    Monte Carlo evaluation of schemes over an SNR grid
  sweep       Run split, calibration and evaluation from one config file

Examples:
  # Generate the benchmark dataset
  edgeselect gen-data --preset bench-a --seed 1 --n 8000 --out-dir data

  # Calibrate every composite model at alpha = beta = 0.01
  edgeselect calibrate --manifest data/manifest.json --out-dir out

  # Evaluate schemes over 0..30 dB
  edgeselect evaluate --manifest data/manifest.json --schemes fixed,dynamic --snr-db 0:30:6

Set EDGESELECT_WORKERS to use more worker threads.

For help on a specific command:
  edgeselect <command> --help
        """,
    )

    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    subparsers = parser.add_subparsers(
        dest="command", title="commands", description="Available commands", help="Command to run"
    )
    for name, (_, help_text) in COMMANDS.items():
        # Each command module parses its own arguments, including --help
        subparsers.add_parser(name, help=help_text, add_help=False)

    # Parse only the command name first
    args, remaining = parser.parse_known_args()

    if not args.command:
        parser.print_help()
        return 0

    module, _ = COMMANDS[args.command]
    command = importlib.import_module(f"edgeselect.commands.{module}")
    return command.run(remaining)


if __name__ == "__main__":
    sys.exit(main())
