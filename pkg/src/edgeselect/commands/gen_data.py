#!/usr/bin/env python3
"""
Synthetic Dataset Generator

Writes a score/size dataset for a preset model bank, plus the generator settings used,
so the same tree can be regenerated or edited and fed back with --synthetic-config.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import tomlkit

from edgeselect.common import ConfigError, atomic_write_text, configure_logging, print_banner
from edgeselect.dataset import (
    DatasetValidationError,
    ModelBank,
    SyntheticModelConfig,
    generate_synthetic,
    write_dataset,
)

PRESETS = {
    "bench-a": (ModelBank.bench_a, SyntheticModelConfig.bench_a),
    "paper-models": (ModelBank.effnet_webp, SyntheticModelConfig.effnet_webp),
    "effnet-webp": (ModelBank.effnet_webp, SyntheticModelConfig.effnet_webp),
}


def read_synthetic_config(path: Path) -> SyntheticModelConfig:
    """Load generator settings from a synthetic.toml written by this command."""
    if not path.exists():
        raise ConfigError(f"Synthetic config {path} does not exist")
    try:
        document = tomlkit.parse(path.read_text(encoding="utf-8")).unwrap()
    except Exception as e:
        raise ConfigError(f"Failed to parse TOML in {path}: {e}") from e
    settings = document.get("synthetic", document)
    return SyntheticModelConfig.from_dict(settings)


def synthetic_toml(preset: str, n: int, bank: ModelBank, config: SyntheticModelConfig) -> str:
    doc = tomlkit.document()
    doc.add(tomlkit.comment("Settings used by edgeselect gen-data"))
    doc.add("preset", preset)
    doc.add("n", n)
    doc.add("label_count", bank.label_count)
    doc.add("d_lbl_bits", bank.d_lbl)
    table = tomlkit.table()
    for key, value in config.to_dict().items():
        table.add(key, value)
    doc.add("synthetic", table)
    return tomlkit.dumps(doc)


def run(args=None):
    """Run the dataset generator command."""
    parser = argparse.ArgumentParser(
        prog="edgeselect gen-data",
        description="Generate a synthetic confidence-score and message-size dataset",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Benchmark bank: 3 encoders x 3 models, 50 labels
  edgeselect gen-data --preset bench-a --seed 1 --n 8000 --out-dir data

  # Published timings: 4 encoders x 3 models
  edgeselect gen-data --preset paper-models --labels 100 --out-dir data

  # Regenerate from edited settings
  edgeselect gen-data --synthetic-config data/synthetic.toml --out-dir data2
        """,
    )
    parser.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default="bench-a",
        help="Model bank and generator preset (default: bench-a)",
    )
    parser.add_argument("--seed", type=int, help="Generator seed (default: 0)")
    parser.add_argument("--n", type=int, default=8000, help="Number of samples (default: 8000)")
    parser.add_argument("--labels", type=int, help="Label set size (default: per preset)")
    parser.add_argument("--d-lbl", type=int, default=64, help="Bits per label (default: 64)")
    parser.add_argument(
        "--synthetic-config", type=Path, metavar="FILE", help="Generator settings (TOML)"
    )
    parser.add_argument(
        "--out-dir", type=Path, required=True, help="Existing directory for the dataset files"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")

    parsed_args = parser.parse_args(args)
    configure_logging(parsed_args.verbose)

    if not parsed_args.out_dir.is_dir():
        print(f"Error: Output directory {parsed_args.out_dir} does not exist", file=sys.stderr)
        return 1

    make_bank, make_config = PRESETS[parsed_args.preset]
    bank_kwargs = {"d_lbl": parsed_args.d_lbl}
    if parsed_args.labels is not None:
        bank_kwargs["label_count"] = parsed_args.labels

    try:
        bank = make_bank(**bank_kwargs)
        if parsed_args.synthetic_config:
            config = read_synthetic_config(parsed_args.synthetic_config)
        else:
            config = make_config()
        if parsed_args.seed is not None:
            config.seed = parsed_args.seed
        config.validate(bank)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print_banner("Synthetic Dataset Generator")
    print(f"Preset:  {parsed_args.preset}")
    print(f"Samples: {parsed_args.n}")
    print(f"Labels:  {bank.label_count}")
    print(f"Models:  {bank.n_encoders} encoders x {bank.n_models} edge models")
    print(f"Seed:    {config.seed}")
    print()

    settings_text = synthetic_toml(parsed_args.preset, parsed_args.n, bank, config)
    canonical = json.dumps(
        {"preset": parsed_args.preset, "n": parsed_args.n, "synthetic": config.to_dict()},
        sort_keys=True,
    )
    provenance = {
        "generator": "edgeselect gen-data",
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": config.seed,
    }

    try:
        dataset = generate_synthetic(config, parsed_args.n, bank)
        manifest = write_dataset(dataset, bank, parsed_args.out_dir, provenance=provenance)
        atomic_write_text(parsed_args.out_dir / "synthetic.toml", settings_text)
    except (DatasetValidationError, ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    for l, k in bank.combinations():
        top1 = (dataset.scores_for(l, k).argmax(axis=1) == dataset.true_labels).mean()
        print(f"  {bank.label(l, k):<24} top-1 accuracy {top1:.3f}")
    print()
    print_banner("GENERATION SUMMARY")
    print(f"Manifest:  {manifest}")
    print(f"Settings:  {parsed_args.out_dir / 'synthetic.toml'}")
    print(f"{'='*60}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
