#!/usr/bin/env python3
"""
Threshold Calibration

Calibrates every composite model on the labeled calibration partition at
epsilon = alpha (1 - beta) and writes one JSON file per model.
"""

import argparse
import sys

from edgeselect.common import (
    add_common_args,
    add_experiment_args,
    configure_logging,
    load_partitions,
    print_banner,
    require_dir,
    resolve_config,
    worker_count,
    write_json,
)
from edgeselect.conformal import CalibratedModel, calibrate_all


def calibration_filename(bank, l: int, k: int) -> str:
    return f"calibration_{bank.encoders[l].id}__{bank.models[k].id}.json"


def run(args=None):
    """Run the calibration command."""
    parser = argparse.ArgumentParser(
        prog="edgeselect calibrate",
        description="Calibrate the prediction-set threshold of every composite model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Calibrate at the default alpha = beta = 0.01 (epsilon = 0.0099)
  edgeselect calibrate --manifest data/manifest.json --out-dir out

  # Settings from a config file, overriding alpha
  edgeselect calibrate --config experiment.yaml --alpha 0.05 --out-dir out
        """,
    )
    add_experiment_args(parser)
    add_common_args(parser)
    parsed_args = parser.parse_args(args)
    configure_logging(parsed_args.verbose)

    try:
        config = resolve_config(parsed_args)
        out_dir = require_dir(parsed_args.out_dir)
        bank, parts = load_partitions(config)
        epsilon = config.epsilon()
        results = calibrate_all(
            parts.labeled, bank, config.loss_function(), epsilon, workers=worker_count()
        )
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print_banner("Conformal Threshold Calibration")
    print(f"Labeled samples: {parts.labeled.sample_count}")
    print(f"epsilon:         {epsilon:.6g}")
    print()

    provenance = config.provenance()
    failed = 0
    for (l, k), result in results.items():
        name = bank.label(l, k)
        if not isinstance(result, CalibratedModel):
            print(f"  {name:<24} ERROR: {result}", file=sys.stderr)
            failed += 1
            continue
        data = result.to_dict(bank)
        data["provenance"] = provenance
        path = out_dir / calibration_filename(bank, l, k)
        write_json(path, data)
        print(f"  {name:<24} lambda={result.threshold:.6f} risk={result.empirical_risk:.5f}")

    print()
    print_banner("CALIBRATION SUMMARY")
    print(f"Calibrated: {len(results) - failed}")
    print(f"Infeasible: {failed}")
    print(f"{'='*60}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(run())
