"""
Score/size datasets standing in for the black-box encoder and classifier pipeline.

A dataset holds, for every sample, the confidence scores produced by every composite
model g_{l,k} (encoder/decoder l followed by inference model k), the ground-truth label
and the size in bits of the uplink message produced by every encoder. Datasets are read
from a JSON manifest plus CSV files, or generated synthetically.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

logger = logging.getLogger(__name__)

SCORE_FORMAT = "%.9g"


class DatasetValidationError(ValueError):
    """Raised when a dataset or manifest fails validation."""

    def __init__(self, message: str, path: Optional[Path] = None, row: Optional[int] = None):
        self.path = path
        self.row = row
        location = ""
        if path is not None:
            location = f"{path}"
            if row is not None:
                location += f", row {row}"
            location += ": "
        super().__init__(f"{location}{message}")


class DatasetFileMissingError(DatasetValidationError):
    """A file named by the manifest does not exist."""


class DimensionMismatchError(DatasetValidationError):
    """Array shapes disagree with each other or with the model bank."""


class ScoreRangeError(DatasetValidationError):
    """A confidence score lies outside [0, 1]."""


class SizeValueError(DatasetValidationError):
    """An uplink message size is non-positive or not finite."""


class LabelValueError(DatasetValidationError):
    """A label index is not a valid index into the label set."""


@dataclass(frozen=True)
class EncoderSpec:
    """An encoder/decoder pair with its fixed total computation time (seconds)."""

    id: str
    tau_ul: float


@dataclass(frozen=True)
class InferenceModelSpec:
    """An edge inference model with its fixed computation time (seconds)."""

    id: str
    tau_f: float


@dataclass(frozen=True)
class ModelBank:
    """The L encoder/decoder pairs and K inference models forming L x K composite models."""

    encoders: Tuple[EncoderSpec, ...]
    models: Tuple[InferenceModelSpec, ...]
    label_count: int
    d_lbl: int = 64

    def __post_init__(self):
        object.__setattr__(self, "encoders", tuple(self.encoders))
        object.__setattr__(self, "models", tuple(self.models))
        if not self.encoders or not self.models:
            raise ValueError("A model bank needs at least one encoder and one model")
        if self.label_count < 2:
            raise ValueError(f"label_count must be at least 2, got {self.label_count}")
        if self.d_lbl < 1:
            raise ValueError(f"d_lbl must be at least 1 bit, got {self.d_lbl}")
        times = [e.tau_ul for e in self.encoders] + [m.tau_f for m in self.models]
        if not all(np.isfinite(t) and t >= 0 for t in times):
            raise ValueError("Computation times must be finite and non-negative")
        tau_f = [m.tau_f for m in self.models]
        if any(b < a for a, b in zip(tau_f, tau_f[1:])):
            raise ValueError(f"Model computation times must be non-decreasing, got {tau_f}")

    @property
    def n_encoders(self) -> int:
        return len(self.encoders)

    @property
    def n_models(self) -> int:
        return len(self.models)

    def combinations(self) -> List[Tuple[int, int]]:
        """All (l, k) index pairs, l-major then k ascending."""
        return [(l, k) for l in range(self.n_encoders) for k in range(self.n_models)]

    def label(self, l: int, k: int) -> str:
        return f"{self.encoders[l].id}+{self.models[k].id}"

    @classmethod
    def effnet_webp(cls, label_count: int = 1000, d_lbl: int = 64) -> "ModelBank":
        """WebP encoders and EfficientNetV2 classifiers with their published timings."""
        return cls(
            encoders=(
                EncoderSpec("webp-0", 0.0100),
                EncoderSpec("webp-20", 0.0125),
                EncoderSpec("webp-50", 0.0150),
                EncoderSpec("webp-80", 0.0175),
            ),
            models=(
                InferenceModelSpec("effnetv2-s", 0.024),
                InferenceModelSpec("effnetv2-m", 0.057),
                InferenceModelSpec("effnetv2-l", 0.098),
            ),
            label_count=label_count,
            d_lbl=d_lbl,
        )

    @classmethod
    def bench_a(cls, label_count: int = 50, d_lbl: int = 64) -> "ModelBank":
        """Three-encoder, three-model bank used by the synthetic benchmark."""
        return cls(
            encoders=(
                EncoderSpec("webp-0", 0.0100),
                EncoderSpec("webp-20", 0.0125),
                EncoderSpec("webp-50", 0.0150),
            ),
            models=(
                InferenceModelSpec("effnetv2-s", 0.024),
                InferenceModelSpec("effnetv2-m", 0.057),
                InferenceModelSpec("effnetv2-l", 0.098),
            ),
            label_count=label_count,
            d_lbl=d_lbl,
        )


@dataclass(frozen=True)
class ScoreDataset:
    """Per-sample scores for every composite model, labels and uplink sizes.

    ``scores`` has shape (L, K, N, |Y|), ``ul_sizes`` has shape (L, N) and
    ``true_labels`` has shape (N,) or is None for an unlabeled partition. ``indices``
    records which rows of the parent dataset a partition was taken from.
    """

    scores: np.ndarray
    ul_sizes: np.ndarray
    true_labels: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.scores.ndim != 4:
            raise DimensionMismatchError(
                f"scores must have shape (L, K, N, labels), got {self.scores.shape}"
            )
        n_enc, _, n, _ = self.scores.shape
        if self.ul_sizes.shape != (n_enc, n):
            raise DimensionMismatchError(
                f"ul_sizes shape {self.ul_sizes.shape} does not match (L, N) = {(n_enc, n)}"
            )
        if self.true_labels is not None and self.true_labels.shape != (n,):
            raise DimensionMismatchError(
                f"true_labels shape {self.true_labels.shape} does not match N = {n}"
            )
        for arr in (self.scores, self.ul_sizes, self.true_labels, self.indices):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def sample_count(self) -> int:
        return self.scores.shape[2]

    @property
    def label_count(self) -> int:
        return self.scores.shape[3]

    @property
    def is_labeled(self) -> bool:
        return self.true_labels is not None

    def scores_for(self, l: int, k: int) -> np.ndarray:
        """The N x |Y| score matrix of composite model g_{l,k}."""
        return self.scores[l, k]

    def subset(self, rows: Sequence[int], keep_labels: bool = True) -> "ScoreDataset":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None
        if keep_labels and self.true_labels is not None:
            labels = self.true_labels[rows].copy()
        parent = self.indices if self.indices is not None else np.arange(self.sample_count)
        return ScoreDataset(
            scores=self.scores[:, :, rows, :].copy(),
            ul_sizes=self.ul_sizes[:, rows].copy(),
            true_labels=labels,
            indices=parent[rows].copy(),
        )

    def check_bank(self, bank: ModelBank):
        """Raise DimensionMismatchError if the dataset does not fit ``bank``."""
        expected = (bank.n_encoders, bank.n_models)
        if self.scores.shape[:2] != expected:
            raise DimensionMismatchError(
                f"dataset has {self.scores.shape[:2]} composite models, bank defines {expected}"
            )
        if self.label_count != bank.label_count:
            raise DimensionMismatchError(
                f"dataset has {self.label_count} labels, bank defines {bank.label_count}"
            )


class Partitions(NamedTuple):
    """Labeled calibration, unlabeled calibration and evaluation partitions."""

    labeled: ScoreDataset
    unlabeled: ScoreDataset
    evaluation: ScoreDataset


@dataclass
class SyntheticModelConfig:
    """Settings of the synthetic stand-in for the black-box models.

    ``accuracy[l][k]`` is the top-1 accuracy a_{l,k} of composite model g_{l,k}.
    Uplink sizes are log-normal per encoder with ``size_log_mean[l]`` and
    ``size_log_sd[l]`` (natural log of bits). ``size_difficulty_corr`` couples log-size
    to the latent sample difficulty. When a model is wrong, the rank of the true label
    among the scores follows a geometric law with ratio ``miss_rank_decay``.
    """

    accuracy: List[List[float]]
    concentration: float = 0.3
    size_log_mean: List[float] = field(default_factory=list)
    size_log_sd: List[float] = field(default_factory=list)
    size_difficulty_corr: float = 0.0
    miss_rank_decay: float = 0.5
    seed: int = 0

    def validate(self, bank: ModelBank):
        acc = np.asarray(self.accuracy, dtype=float)
        if acc.shape != (bank.n_encoders, bank.n_models):
            raise ValueError(
                f"accuracy must be {bank.n_encoders}x{bank.n_models}, got shape {acc.shape}"
            )
        if np.any(acc <= 0) or np.any(acc > 1):
            raise ValueError("accuracy values must lie in (0, 1]")
        if not self.concentration > 0:
            raise ValueError(f"concentration must be positive, got {self.concentration}")
        if len(self.size_log_mean) != bank.n_encoders or len(self.size_log_sd) != bank.n_encoders:
            raise ValueError("size_log_mean and size_log_sd need one entry per encoder")
        if any(sd < 0 for sd in self.size_log_sd):
            raise ValueError("size_log_sd must be non-negative")
        if not -1.0 <= self.size_difficulty_corr <= 1.0:
            raise ValueError("size_difficulty_corr must lie in [-1, 1]")
        if not 0.0 < self.miss_rank_decay <= 1.0:
            raise ValueError("miss_rank_decay must lie in (0, 1]")

    def to_dict(self) -> Dict:
        return {
            "accuracy": [[float(a) for a in row] for row in self.accuracy],
            "concentration": float(self.concentration),
            "size_log_mean": [float(v) for v in self.size_log_mean],
            "size_log_sd": [float(v) for v in self.size_log_sd],
            "size_difficulty_corr": float(self.size_difficulty_corr),
            "miss_rank_decay": float(self.miss_rank_decay),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticModelConfig":
        known = {
            "accuracy",
            "concentration",
            "size_log_mean",
            "size_log_sd",
            "size_difficulty_corr",
            "miss_rank_decay",
            "seed",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown synthetic config keys: {sorted(unknown)}")
        return cls(**{key: data[key] for key in data})

    @classmethod
    def bench_a(cls, seed: int = 0) -> "SyntheticModelConfig":
        """Accuracy/size settings for the three-encoder benchmark bank.

        The large model is weak on the lowest-quality encoder, mirroring classifiers
        that degrade on heavily compressed images.
        """
        return cls(
            accuracy=[
                [0.80, 0.83, 0.78],
                [0.86, 0.90, 0.92],
                [0.88, 0.93, 0.96],
            ],
            concentration=0.3,
            size_log_mean=[float(np.log(40e3)), float(np.log(90e3)), float(np.log(160e3))],
            size_log_sd=[0.35, 0.35, 0.35],
            seed=seed,
        )

    @classmethod
    def effnet_webp(cls, seed: int = 0) -> "SyntheticModelConfig":
        """Settings for the four-encoder, three-model published bank."""
        return cls(
            accuracy=[
                [0.78, 0.81, 0.74],
                [0.84, 0.88, 0.89],
                [0.86, 0.91, 0.94],
                [0.87, 0.92, 0.96],
            ],
            concentration=0.1,
            size_log_mean=[
                float(np.log(30e3)),
                float(np.log(70e3)),
                float(np.log(130e3)),
                float(np.log(220e3)),
            ],
            size_log_sd=[0.4, 0.4, 0.4, 0.4],
            seed=seed,
        )


def generate_synthetic(config: SyntheticModelConfig, n: int, bank: ModelBank) -> ScoreDataset:
    """Draw a synthetic labeled dataset of ``n`` samples for every composite model."""
    if n < 1:
        raise ValueError(f"Sample count must be at least 1, got {n}")
    config.validate(bank)
    rng = np.random.default_rng(config.seed)
    n_labels = bank.label_count

    labels = rng.integers(0, n_labels, size=n)
    # Shared per-sample difficulty: g_{l,k} ranks the true label first iff u < a_{l,k}.
    difficulty = rng.random(n)

    ranks = np.arange(n_labels - 1)
    rank_weights = config.miss_rank_decay**ranks
    rank_weights /= rank_weights.sum()

    scores = np.empty((bank.n_encoders, bank.n_models, n, n_labels))
    rows = np.arange(n)
    for l, k in bank.combinations():
        draw = rng.dirichlet(np.full(n_labels, config.concentration), size=n)
        order = np.argsort(-draw, axis=1, kind="stable")
        correct = difficulty < config.accuracy[l][k]
        # Rank 0 when correct, otherwise a non-maximal rank 1..|Y|-1.
        miss_rank = 1 + rng.choice(n_labels - 1, size=n, p=rank_weights)
        rank = np.where(correct, 0, miss_rank)
        source = order[rows, rank]
        # Swap the chosen coordinate into the true label's position.
        true_vals = draw[rows, labels].copy()
        draw[rows, labels] = draw[rows, source]
        draw[rows, source] = true_vals
        scores[l, k] = draw

    z_difficulty = ndtri(np.clip(difficulty, 1e-12, 1 - 1e-12))
    rho = config.size_difficulty_corr
    ul_sizes = np.empty((bank.n_encoders, n), dtype=np.int64)
    for l in range(bank.n_encoders):
        z = rho * z_difficulty + np.sqrt(1.0 - rho**2) * rng.standard_normal(n)
        bits = np.exp(config.size_log_mean[l] + config.size_log_sd[l] * z)
        ul_sizes[l] = np.maximum(1, np.rint(bits)).astype(np.int64)

    logger.debug("Generated %d samples for %d composite models", n, len(bank.combinations()))
    return ScoreDataset(scores=scores, ul_sizes=ul_sizes, true_labels=labels.astype(np.int64))


def split(dataset: ScoreDataset, n_labeled: int, n_unlabeled: int, seed: int) -> Partitions:
    """Randomly split ``dataset`` into disjoint labeled, unlabeled and evaluation parts.

    The unlabeled partition has its labels stripped. The evaluation partition is the
    remainder and must be non-empty.
    """
    n = dataset.sample_count
    if n_labeled < 1 or n_unlabeled < 1:
        raise ValueError("Calibration partitions need at least one sample each")
    if n_labeled + n_unlabeled >= n:
        raise ValueError(
            f"n_labeled + n_unlabeled = {n_labeled + n_unlabeled} leaves no evaluation "
            f"samples out of N = {n}"
        )
    if not dataset.is_labeled:
        raise ValueError("Only a labeled dataset can be split into calibration partitions")
    perm = np.random.default_rng(seed).permutation(n)
    labeled_rows = np.sort(perm[:n_labeled])
    unlabeled_rows = np.sort(perm[n_labeled : n_labeled + n_unlabeled])
    eval_rows = np.sort(perm[n_labeled + n_unlabeled :])
    return Partitions(
        labeled=dataset.subset(labeled_rows),
        unlabeled=dataset.subset(unlabeled_rows, keep_labels=False),
        evaluation=dataset.subset(eval_rows),
    )


def _load_csv(path: Path, dtype=float) -> np.ndarray:
    if not path.exists():
        raise DatasetFileMissingError("file does not exist", path=path)
    try:
        return np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    except ValueError as err:
        raise DatasetValidationError(f"cannot parse CSV: {err}", path=path) from err


def _require(data: Dict, key: str, manifest_path: Path, where: str = "manifest"):
    if not isinstance(data, dict) or key not in data:
        raise DatasetValidationError(f"{where} is missing '{key}'", path=manifest_path)
    return data[key]


def load_dataset(manifest_path: Union[str, Path]) -> Tuple[ScoreDataset, ModelBank]:
    """Load and validate a dataset described by a JSON manifest.

    Rows in error messages are 1-based line numbers of the offending CSV file.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetFileMissingError("manifest does not exist", path=manifest_path)
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetValidationError(f"invalid JSON: {err}", path=manifest_path) from err
    base = manifest_path.parent

    try:
        encoders = [
            EncoderSpec(str(e["id"]), float(e["tau_ul_s"]))
            for e in _require(data, "encoders", manifest_path)
        ]
        models = [
            InferenceModelSpec(str(m["id"]), float(m["tau_f_s"]))
            for m in _require(data, "models", manifest_path)
        ]
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, DatasetValidationError):
            raise
        raise DatasetValidationError(
            f"malformed encoder/model entry: {err}", path=manifest_path
        ) from err
    try:
        bank = ModelBank(
            encoders=tuple(encoders),
            models=tuple(models),
            label_count=int(_require(data, "label_count", manifest_path)),
            d_lbl=int(_require(data, "d_lbl_bits", manifest_path)),
        )
    except ValueError as err:
        raise DatasetValidationError(str(err), path=manifest_path) from err

    labels_path = base / _require(data, "labels_file", manifest_path)
    labels = _load_csv(labels_path, dtype=np.int64)
    if labels.shape[1] != 1:
        raise DimensionMismatchError(
            f"labels file must have one column, found {labels.shape[1]}", path=labels_path
        )
    labels = labels[:, 0]
    n = labels.shape[0]
    bad = np.flatnonzero((labels < 0) | (labels >= bank.label_count))
    if bad.size:
        raise LabelValueError(
            f"label {labels[bad[0]]} outside [0, {bank.label_count})",
            path=labels_path,
            row=bad[0] + 1,
        )

    ul_sizes = np.empty((bank.n_encoders, n), dtype=np.int64)
    for l, enc in enumerate(_require(data, "encoders", manifest_path)):
        size_path = base / _require(enc, "ul_sizes_file", manifest_path, f"encoder entry {l + 1}")
        sizes = _load_csv(size_path)
        if sizes.shape != (n, 1):
            raise DimensionMismatchError(
                f"expected {n} rows x 1 column, found {sizes.shape[0]} x {sizes.shape[1]}",
                path=size_path,
            )
        sizes = sizes[:, 0]
        bad = np.flatnonzero(~np.isfinite(sizes) | (sizes <= 0) | (sizes != np.round(sizes)))
        if bad.size:
            raise SizeValueError(
                f"size {sizes[bad[0]]} is not a positive whole number of bits",
                path=size_path,
                row=bad[0] + 1,
            )
        ul_sizes[l] = sizes.astype(np.int64)

    enc_index = {e.id: i for i, e in enumerate(bank.encoders)}
    model_index = {m.id: i for i, m in enumerate(bank.models)}
    scores = np.full((bank.n_encoders, bank.n_models, n, bank.label_count), np.nan)
    seen = set()
    for i, entry in enumerate(_require(data, "scores", manifest_path)):
        try:
            l = enc_index[entry["encoder_id"]]
            k = model_index[entry["model_id"]]
        except KeyError as err:
            raise DatasetValidationError(
                f"scores entry references unknown id {err}", path=manifest_path
            ) from err
        score_path = base / _require(entry, "file", manifest_path, f"scores entry {i + 1}")
        matrix = _load_csv(score_path)
        if matrix.shape != (n, bank.label_count):
            raise DimensionMismatchError(
                f"expected {n} x {bank.label_count} scores, found "
                f"{matrix.shape[0]} x {matrix.shape[1]}",
                path=score_path,
            )
        bad = np.argwhere(~((matrix >= 0.0) & (matrix <= 1.0)))
        if bad.size:
            row, col = bad[0]
            raise ScoreRangeError(
                f"score {matrix[row, col]} in column {col} is outside [0, 1]",
                path=score_path,
                row=int(row) + 1,
            )
        scores[l, k] = matrix
        seen.add((l, k))

    missing = [bank.label(l, k) for l, k in bank.combinations() if (l, k) not in seen]
    if missing:
        raise DimensionMismatchError(
            f"no score file for composite models {missing}", path=manifest_path
        )

    logger.debug("Loaded %d samples from %s", n, manifest_path)
    return ScoreDataset(scores=scores, ul_sizes=ul_sizes, true_labels=labels), bank


def _atomic_savetxt(path: Path, array: np.ndarray, fmt: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            np.savetxt(f, array, fmt=fmt, delimiter=",")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_dataset(
    dataset: ScoreDataset,
    bank: ModelBank,
    out_dir: Union[str, Path],
    provenance: Optional[Dict] = None,
) -> Path:
    """Write ``dataset`` as CSV files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise DatasetFileMissingError("output directory does not exist", path=out_dir)
    if not dataset.is_labeled:
        raise ValueError("Only labeled datasets can be written")
    dataset.check_bank(bank)

    _atomic_savetxt(out_dir / "labels.csv", dataset.true_labels[:, None], "%d")
    manifest = {
        "label_count": bank.label_count,
        "d_lbl_bits": bank.d_lbl,
        "encoders": [],
        "models": [{"id": m.id, "tau_f_s": m.tau_f} for m in bank.models],
        "scores": [],
        "labels_file": "labels.csv",
    }
    for l, enc in enumerate(bank.encoders):
        name = f"ul_sizes_{enc.id}.csv"
        _atomic_savetxt(out_dir / name, dataset.ul_sizes[l][:, None], "%d")
        manifest["encoders"].append({"id": enc.id, "tau_ul_s": enc.tau_ul, "ul_sizes_file": name})
    for l, k in bank.combinations():
        name = f"scores_{bank.encoders[l].id}__{bank.models[k].id}.csv"
        _atomic_savetxt(out_dir / name, dataset.scores_for(l, k), SCORE_FORMAT)
        manifest["scores"].append(
            {"encoder_id": bank.encoders[l].id, "model_id": bank.models[k].id, "file": name}
        )
    if provenance:
        manifest["provenance"] = provenance

    manifest_path = out_dir / "manifest.json"
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=False)
            f.write("\n")
        os.replace(tmp, manifest_path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return manifest_path
