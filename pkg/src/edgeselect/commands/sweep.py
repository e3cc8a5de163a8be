#!/usr/bin/env python3
"""
Experiment Sweep

Runs the whole pipeline from one configuration file: split, calibration of every
composite model, fixed selection per SNR point and evaluation of every scheme.
"""

import argparse
import sys

from edgeselect.commands.calibrate import calibration_filename
from edgeselect.commands.evaluate import evaluate_schemes
from edgeselect.common import (
    add_common_args,
    add_experiment_args,
    build_catalog,
    configure_logging,
    load_partitions,
    print_banner,
    require_dir,
    resolve_config,
    write_json,
)
from edgeselect.selection import fixed_select


def run(args=None):
    """Run the sweep command."""
    parser = argparse.ArgumentParser(
        prog="edgeselect sweep",
        description="Split, calibrate, select and evaluate from one configuration file",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full experiment
  edgeselect sweep --config experiment.yaml --out-dir results

  # Same experiment with a different master seed
  edgeselect sweep --config experiment.yaml --seed 3 --out-dir results-seed3
        """,
    )
    add_experiment_args(parser, evaluation=True)
    add_common_args(parser)
    parsed_args = parser.parse_args(args)
    configure_logging(parsed_args.verbose)

    if parsed_args.config is None:
        parser.error("sweep requires --config")

    try:
        config = resolve_config(parsed_args)
        out_dir = require_dir(parsed_args.out_dir)
        bank, parts = load_partitions(config)
        for spec in config.scheme_specs():
            spec.validate(bank)
        catalog = build_catalog(config, bank, parts)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    provenance = config.provenance()
    print_banner("Experiment Sweep")
    print(f"Config:      {parsed_args.config}")
    print(f"Config hash: {provenance['config_hash'][:16]}")
    print(
        f"Partitions:  {parts.labeled.sample_count} labeled, "
        f"{parts.unlabeled.sample_count} unlabeled, {parts.evaluation.sample_count} evaluation"
    )
    print()

    write_json(out_dir / "config.json", dict(config.to_dict(), provenance=provenance))
    for (l, k), entry in catalog.entries.items():
        if not entry.calibrated:
            print(f"  {bank.label(l, k):<24} calibration infeasible: {entry.error}")
            continue
        data = dict(entry.calibration.to_dict(bank), provenance=provenance)
        write_json(out_dir / calibration_filename(bank, l, k), data)

    settings = config.settings()
    selections = []
    snr_dl = config.snr_dl_db or config.snr_db
    try:
        for snr, snr_dl_db in zip(config.snr_db, snr_dl):
            outcome = fixed_select(
                bank,
                None,
                None,
                settings.loss,
                config.alpha,
                config.beta,
                settings.channel(snr, snr_dl_db),
                grid=config.grid,
                catalog=catalog,
            )
            print(
                f"  {snr:>6g} dB  fixed -> {bank.label(outcome.encoder_index, outcome.model_index)}"
                f"  bound={outcome.bound:.5f}"
            )
            selections.append(
                {"snr_db": snr, "snr_dl_db": snr_dl_db, "fixed": outcome.to_dict(bank)}
            )
        write_json(out_dir / "selection.json", {"selections": selections, "provenance": provenance})
        print()
        reports = evaluate_schemes(config, bank, parts, catalog, out_dir)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print()
    print_banner("SWEEP SUMMARY")
    print(f"Schemes:     {len(config.schemes)}")
    print(f"Report rows: {len(reports)}")
    print(f"Results:     {out_dir}")
    print(f"{'='*60}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
