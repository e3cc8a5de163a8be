#!/usr/bin/env python3
"""
edgeselect Common Library

Experiment configuration, shared command-line arguments and output helpers used by
every subcommand.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from edgeselect.bounds import GRID_MODES
from edgeselect.conformal import LossFunction, LossKind
from edgeselect.dataset import ModelBank, Partitions, load_dataset, split
from edgeselect.evaluator import EvaluationSettings, SchemeSpec
from edgeselect.selection import ModelCatalog
from edgeselect.version import __version__

WORKERS_ENV = "EDGESELECT_WORKERS"

DEFAULT_SCHEMES = [
    "fixed",
    "dynamic",
    "dynamic_truncated",
    "baseline_topk:20@1,1",
    "baseline_calibrated@1,1",
    "baseline_topk:20@3,3",
    "baseline_calibrated@3,3",
]


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


def parse_snr_grid(text: Union[str, List[float]]) -> List[float]:
    """Parse ``start:stop:count`` (inclusive, evenly spaced) or a comma list of dB values."""
    if isinstance(text, (list, tuple)):
        values = [float(v) for v in text]
    elif ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"SNR range must be start:stop:count, got '{text}'")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"Invalid SNR range '{text}'") from None
        if count < 1:
            raise ConfigError(f"SNR range needs at least one point, got '{text}'")
        values = [float(v) for v in np.linspace(start, stop, count)]
    else:
        try:
            values = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"Invalid SNR list '{text}'") from None
    if not values:
        raise ConfigError("The SNR grid is empty")
    if not all(np.isfinite(values)):
        raise ConfigError(f"SNR values must be finite, got {values}")
    return values


@dataclass
class ExperimentConfig:
    """Every knob of an experiment, with the published operating point as defaults."""

    manifest: Optional[str] = None
    deadline_s: float = 0.150
    bandwidth_hz: float = 30e6
    d_lbl_bits: Optional[int] = None
    alpha: float = 0.01
    beta: float = 0.01
    loss: str = LossKind.MISS_DETECTION_01.value
    gamma: float = 1.0
    schemes: List[str] = field(default_factory=lambda: list(DEFAULT_SCHEMES))
    snr_db: List[float] = field(default_factory=lambda: [0.0, 6.0, 12.0, 18.0, 24.0, 30.0])
    snr_dl_db: Optional[List[float]] = None
    n_frames: int = 20000
    seed: int = 0
    split_seed: int = 0
    n_labeled: int = 2000
    n_unlabeled: int = 2000
    grid: str = "subgrid"
    rate_table_size: int = 0

    def __post_init__(self):
        self.snr_db = parse_snr_grid(self.snr_db)
        if self.snr_dl_db is not None:
            self.snr_dl_db = parse_snr_grid(self.snr_dl_db)
        if isinstance(self.schemes, str):
            self.schemes = [s.strip() for s in self.schemes.split(",") if s.strip()]
        self.validate()

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.grid not in GRID_MODES:
            raise ConfigError(f"grid must be one of {GRID_MODES}, got '{self.grid}'")
        if self.snr_dl_db is not None and len(self.snr_dl_db) != len(self.snr_db):
            raise ConfigError("snr_dl_db must have as many points as snr_db")
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be at least 1, got {self.n_frames}")
        if not self.schemes:
            raise ConfigError("At least one scheme is required")
        if self.rate_table_size < 0 or self.rate_table_size == 1:
            raise ConfigError("rate_table_size must be 0 (exact decisions) or at least 2")
        try:
            LossKind(self.loss)
            self.scheme_specs()
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def scheme_specs(self) -> List[SchemeSpec]:
        return [SchemeSpec.parse(s) for s in self.schemes]

    def loss_function(self) -> LossFunction:
        return LossFunction(LossKind(self.loss), self.gamma)

    def epsilon(self) -> float:
        return self.alpha * (1.0 - self.beta)

    def settings(self) -> EvaluationSettings:
        return EvaluationSettings(
            bandwidth_hz=self.bandwidth_hz,
            deadline_s=self.deadline_s,
            alpha=self.alpha,
            beta=self.beta,
            loss=self.loss_function(),
            grid=self.grid,
            rate_table_size=self.rate_table_size,
        )

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance(self) -> Dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, "version": __version__}

    @classmethod
    def from_dict(cls, data: Dict, source: Optional[Path] = None) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            where = f" in {source}" if source else ""
            raise ConfigError(f"Unknown configuration key '{unknown[0]}'{where}")
        return cls(**data)


def load_config_file(path: Path) -> Dict:
    """Read a YAML, TOML or JSON configuration file, chosen by suffix."""
    if not path.exists():
        raise ConfigError(f"Configuration file {path} does not exist")
    suffix = path.suffix.lower()
    try:
        if suffix in (".yaml", ".yml"):
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        elif suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            raise ConfigError(f"Unsupported configuration format '{suffix}' for {path}")
    except (yaml.YAMLError, tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Failed to parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


# Command-line destinations that map onto ExperimentConfig fields.
_FLAG_FIELDS = {
    "manifest": "manifest",
    "deadline": "deadline_s",
    "bandwidth": "bandwidth_hz",
    "d_lbl": "d_lbl_bits",
    "alpha": "alpha",
    "beta": "beta",
    "loss": "loss",
    "gamma": "gamma",
    "schemes": "schemes",
    "snr_db": "snr_db",
    "snr_dl_db": "snr_dl_db",
    "frames": "n_frames",
    "seed": "seed",
    "split_seed": "split_seed",
    "n_labeled": "n_labeled",
    "n_unlabeled": "n_unlabeled",
    "rate_table_size": "rate_table_size",
}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the --config file, then any flag that was given."""
    data: Dict = {}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        data.update(load_config_file(Path(config_path)))
        ExperimentConfig.from_dict(data, source=Path(config_path))
    for dest, key in _FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    if getattr(args, "exact_grid", False):
        data["grid"] = "exact"
    return ExperimentConfig.from_dict(data, source=config_path)


def worker_count() -> int:
    """Worker threads from $EDGESELECT_WORKERS, default 1."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got '{raw}'") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1, got {workers}")
    return workers


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def print_banner(title: str):
    print(f"{'='*60}")
    print(title)
    print(f"{'='*60}")


def atomic_write_text(path: Path, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path: Path, data: Dict):
    atomic_write_text(path, json.dumps(data, indent=2) + "\n")


def require_dir(path: Path) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"Output directory {path} does not exist")
    return path


def load_partitions(config: ExperimentConfig) -> Tuple[ModelBank, Partitions]:
    """Load the manifest named by the configuration and split it into partitions."""
    if not config.manifest:
        raise ConfigError("No dataset manifest given (use --manifest or 'manifest' in --config)")
    dataset, bank = load_dataset(config.manifest)
    if config.d_lbl_bits is not None:
        bank = dataclasses.replace(bank, d_lbl=int(config.d_lbl_bits))
    parts = split(dataset, config.n_labeled, config.n_unlabeled, config.split_seed)
    return bank, parts


def build_catalog(config: ExperimentConfig, bank: ModelBank, parts: Partitions) -> ModelCatalog:
    return ModelCatalog.build(
        bank,
        parts.labeled,
        parts.unlabeled,
        config.loss_function(),
        config.epsilon(),
        workers=worker_count(),
    )


def add_common_args(parser: argparse.ArgumentParser):
    """Add common arguments (config, verbose, out-dir) to an argument parser."""
    parser.add_argument(
        "--config",
        type=Path,
        metavar="FILE",
        help="Experiment configuration file (.yaml, .yml, .toml or .json)",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")
    parser.add_argument(
        "--out-dir",
        type=Path,
        default=Path("."),
        help="Existing directory for output files (default: current directory)",
    )


def add_experiment_args(parser: argparse.ArgumentParser, evaluation: bool = False):
    """Add dataset, risk and channel arguments; flags left unset fall back to the config.

    Args:
        parser: The argument parser to add arguments to
        evaluation: Whether to include the scheme, frame and seed arguments
    """
    data = parser.add_argument_group("dataset")
    data.add_argument("--manifest", type=str, metavar="PATH", help="Dataset manifest.json")
    data.add_argument("--n-labeled", type=int, metavar="N", help="Labeled calibration samples")
    data.add_argument(
        "--n-unlabeled", type=int, metavar="N", help="Unlabeled calibration samples"
    )
    data.add_argument("--split-seed", type=int, metavar="SEED", help="Partition seed")

    risk = parser.add_argument_group("risk")
    risk.add_argument("--alpha", type=float, help="Loss requirement (default: 0.01)")
    risk.add_argument("--beta", type=float, help="Deadline violation requirement (default: 0.01)")
    risk.add_argument("--loss", choices=[k.value for k in LossKind], help="Loss function")
    risk.add_argument("--gamma", type=float, help="Loss upper bound (default: 1)")

    link = parser.add_argument_group("channel")
    link.add_argument("--deadline", type=float, metavar="SECONDS", help="Frame deadline T")
    link.add_argument("--bandwidth", type=float, metavar="HZ", help="Bandwidth B")
    link.add_argument("--d-lbl", type=int, metavar="BITS", help="Bits per label in a set")
    link.add_argument(
        "--snr-db",
        type=parse_snr_grid,
        metavar="GRID",
        help="SNR grid in dB: start:stop:count or a comma list (default: 0:30:6)",
    )
    link.add_argument(
        "--snr-dl-db", type=parse_snr_grid, metavar="GRID", help="Separate downlink SNR grid"
    )
    link.add_argument(
        "--exact-grid",
        action="store_true",
        help="Search every order-statistic pair instead of the subgrid",
    )

    if evaluation:
        sim = parser.add_argument_group("evaluation")
        sim.add_argument(
            "--schemes", type=str, metavar="LIST", help="Comma-separated schemes to evaluate"
        )
        sim.add_argument("--frames", type=int, metavar="N", help="Frames per SNR point")
        sim.add_argument("--seed", type=int, help="Master seed for frame draws")
        sim.add_argument(
            "--rate-table-size",
            type=int,
            metavar="N",
            help="Rate grid of dynamic decisions (default: 0, every frame decided exactly)",
        )
