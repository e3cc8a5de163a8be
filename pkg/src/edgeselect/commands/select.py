#!/usr/bin/env python3
"""
Model Selection

Computes the deadline violation bound and expected set size of every composite model at
each SNR point, applies fixed selection and, given --rate-ul, dynamic selection for the
chosen encoder.
"""

import argparse
import csv
import io
import math
import sys

from edgeselect.common import (
    add_common_args,
    add_experiment_args,
    atomic_write_text,
    build_catalog,
    configure_logging,
    load_partitions,
    print_banner,
    require_dir,
    resolve_config,
    write_json,
)
from edgeselect.selection import SelectionError, dynamic_select, fixed_select

BOUND_COLUMNS = [
    "snr_db",
    "l",
    "k",
    "encoder_id",
    "model_id",
    "lambda",
    "set_size",
    "bound",
    "n_star",
    "m_star",
    "mode",
    "rate_ul",
    "status",
    "config_hash",
    "seed",
]


def _candidate_row(bank, snr_db, ev, provenance):
    row = {
        "snr_db": f"{snr_db:g}",
        "l": ev.encoder_index + 1,
        "k": ev.model_index + 1,
        "bound": f"{ev.bound:.9g}",
        "n_star": "",
        "m_star": "",
        "mode": "",
        "rate_ul": "",
    }
    if ev.bound_detail is not None:
        row.update(ev.bound_detail.to_row(ev.encoder_index, ev.model_index))
    row.update(
        {
            "encoder_id": bank.encoders[ev.encoder_index].id,
            "model_id": bank.models[ev.model_index].id,
            "lambda": "" if ev.threshold is None else f"{ev.threshold:.9g}",
            "set_size": "" if math.isinf(ev.set_size) else f"{ev.set_size:.9g}",
            "status": ev.status,
            "config_hash": provenance["config_hash"],
            "seed": provenance["seed"],
        }
    )
    return row


def _print_table(bank, outcome):
    print(f"  {'model':<24} {'lambda':>10} {'bound':>10} {'set size':>10}")
    for ev in outcome.candidates:
        chosen = (ev.encoder_index, ev.model_index) == (outcome.encoder_index, outcome.model_index)
        marker = "*" if chosen else " "
        lam = "-" if ev.threshold is None else f"{ev.threshold:.6f}"
        size = "-" if math.isinf(ev.set_size) else f"{ev.set_size:.3f}"
        note = "" if ev.status == "ok" else f"  ({ev.status})"
        print(
            f"{marker} {bank.label(ev.encoder_index, ev.model_index):<24} "
            f"{lam:>10} {ev.bound:>10.5f} {size:>10}{note}"
        )


def run(args=None):
    """Run the model selection command."""
    parser = argparse.ArgumentParser(
        prog="edgeselect select",
        description="Select a composite model from deadline violation bounds",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Fixed selection at 0, 15 and 30 dB
  edgeselect select --manifest data/manifest.json --snr-db 0,15,30 --out-dir out

  # Also pick the edge model for an observed uplink rate of 20 Mbit/s
  edgeselect select --manifest data/manifest.json --snr-db 10 --rate-ul 20e6

  # Search every order-statistic pair
  edgeselect select --config experiment.toml --exact-grid
        """,
    )
    parser.add_argument(
        "--rate-ul", type=float, metavar="BITS_PER_S", help="Observed uplink rate"
    )
    add_experiment_args(parser)
    add_common_args(parser)
    parsed_args = parser.parse_args(args)
    configure_logging(parsed_args.verbose)

    if parsed_args.rate_ul is not None and not parsed_args.rate_ul > 0:
        parser.error("--rate-ul must be positive")

    try:
        config = resolve_config(parsed_args)
        out_dir = require_dir(parsed_args.out_dir)
        bank, parts = load_partitions(config)
        catalog = build_catalog(config, bank, parts)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    settings = config.settings()
    provenance = config.provenance()
    print_banner("Deadline-Aware Model Selection")
    print(f"epsilon: {config.epsilon():.6g}   beta: {config.beta:g}   grid: {config.grid}")
    print()

    rows = []
    selections = []
    snr_dl = config.snr_dl_db or config.snr_db
    for snr, snr_dl_db in zip(config.snr_db, snr_dl):
        channel = settings.channel(snr, snr_dl_db)
        try:
            outcome = fixed_select(
                bank,
                parts.labeled,
                parts.unlabeled,
                settings.loss,
                config.alpha,
                config.beta,
                channel,
                grid=config.grid,
                catalog=catalog,
            )
            dynamic = None
            if parsed_args.rate_ul is not None:
                dynamic = dynamic_select(
                    outcome.encoder_index,
                    bank,
                    parts.labeled,
                    parts.unlabeled,
                    settings.loss,
                    config.alpha,
                    config.beta,
                    channel,
                    parsed_args.rate_ul,
                    grid=config.grid,
                    catalog=catalog,
                )
        except SelectionError as e:
            print(f"Error: {e}", file=sys.stderr)
            return 1

        print(f"SNR {snr:g} dB (downlink {snr_dl_db:g} dB)")
        _print_table(bank, outcome)
        status = "feasible" if outcome.feasible else "INFEASIBLE"
        print(f"  -> {bank.label(outcome.encoder_index, outcome.model_index)} ({status})")
        rows.extend(_candidate_row(bank, snr, ev, provenance) for ev in outcome.candidates)
        entry = {"snr_db": snr, "snr_dl_db": snr_dl_db, "fixed": outcome.to_dict(bank)}
        if dynamic is not None:
            print(
                f"  -> at rate_ul={parsed_args.rate_ul:g}: "
                f"{bank.label(dynamic.encoder_index, dynamic.model_index)} "
                f"(bound {dynamic.bound:.5f})"
            )
            rows.extend(_candidate_row(bank, snr, ev, provenance) for ev in dynamic.candidates)
            entry["dynamic"] = dict(dynamic.to_dict(bank), rate_ul=parsed_args.rate_ul)
        selections.append(entry)
        print()

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BOUND_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_text(out_dir / "bounds.csv", buf.getvalue())
    write_json(out_dir / "selection.json", {"selections": selections, "provenance": provenance})

    print_banner("SELECTION SUMMARY")
    print(f"Bounds:     {out_dir / 'bounds.csv'}")
    print(f"Selections: {out_dir / 'selection.json'}")
    print(f"{'='*60}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
