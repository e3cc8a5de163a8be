"""
Monte Carlo evaluation of selection schemes over an SNR grid.

Each frame draws an evaluation sample (with replacement) and one Rayleigh uplink/downlink
realisation, runs the scheme end to end and records the loss, the relaxed loss, the set
size and whether the deadline was met. Reports are aggregations of the per-frame records
and can be recomputed from a saved frame log.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from edgeselect.channel import (
    ChannelConfig,
    LinkDraw,
    downlink_time,
    meets_deadline,
    sample_links,
    uplink_time,
)
from edgeselect.conformal import LossFunction, prediction_set
from edgeselect.dataset import ModelBank, ScoreDataset
from edgeselect.selection import (
    ModelCatalog,
    RateDecisionTable,
    SelectionOutcome,
    fixed_select,
    relaxed_loss,
    truncate,
    truncation_cap,
)

logger = logging.getLogger(__name__)

FRAME_COLUMNS = [
    "frame_id",
    "snr_db",
    "l",
    "k",
    "rate_ul",
    "rate_dl",
    "d_ul",
    "set_size",
    "t_total_s",
    "met_deadline",
    "loss",
    "relaxed_loss",
    "scheme",
    "sample",
    "bound",
    "truncation_cap",
]

REPORT_COLUMNS = [
    "snr_db",
    "snr_dl_db",
    "scheme",
    "n_frames",
    "cond_loss",
    "cond_loss_se",
    "violation_rate",
    "violation_rate_se",
    "mean_set_size",
    "mean_set_size_se",
    "relaxed_loss",
    "relaxed_loss_se",
    "feasible",
    "config_hash",
    "seed",
]


class SchemeKind(str, Enum):
    FIXED = "fixed"
    DYNAMIC = "dynamic"
    DYNAMIC_TRUNCATED = "dynamic_truncated"
    BASELINE_TOPK = "baseline_topk"
    BASELINE_CALIBRATED = "baseline_calibrated"


BASELINES = (SchemeKind.BASELINE_TOPK, SchemeKind.BASELINE_CALIBRATED)


@dataclass(frozen=True)
class SchemeSpec:
    """A scheme to evaluate; baselines pin one composite model (0-based indices)."""

    kind: SchemeKind
    encoder_index: Optional[int] = None
    model_index: Optional[int] = None
    kappa: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if self.kind in BASELINES:
            if self.encoder_index is None or self.model_index is None:
                raise ValueError(f"{self.kind.value} needs a composite model (l, k)")
            if self.encoder_index < 0 or self.model_index < 0:
                raise ValueError("Composite model indices must be non-negative")
        if self.kind is SchemeKind.BASELINE_TOPK and (self.kappa is None or self.kappa < 1):
            raise ValueError(f"baseline_topk needs kappa >= 1, got {self.kappa}")

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        """Parse ``fixed``, ``dynamic``, ``dynamic_truncated``, ``baseline_topk:KAPPA[@L,K]``
        or ``baseline_calibrated[@L,K]``; L and K are 1-based and default to 1."""
        text = text.strip()
        head, _, where = text.partition("@")
        name, _, arg = head.partition(":")
        try:
            kind = SchemeKind(name)
        except ValueError:
            raise ValueError(f"Unknown scheme '{text}'") from None
        if kind not in BASELINES:
            if arg or where:
                raise ValueError(f"Scheme '{name}' takes no arguments: '{text}'")
            return cls(kind)

        l, k = 1, 1
        if where:
            try:
                l, k = (int(part) for part in where.split(","))
            except ValueError:
                raise ValueError(f"Expected '@L,K' in scheme '{text}'") from None
        kappa = None
        if kind is SchemeKind.BASELINE_TOPK:
            try:
                kappa = int(arg)
            except ValueError:
                raise ValueError(f"Expected 'baseline_topk:KAPPA' in scheme '{text}'") from None
        elif arg:
            raise ValueError(f"baseline_calibrated takes no ':' argument: '{text}'")
        return cls(kind, l - 1, k - 1, kappa)

    @property
    def name(self) -> str:
        if self.kind not in BASELINES:
            return self.kind.value
        where = f"@{self.encoder_index + 1},{self.model_index + 1}"
        if self.kind is SchemeKind.BASELINE_TOPK:
            return f"{self.kind.value}:{self.kappa}{where}"
        return f"{self.kind.value}{where}"

    def validate(self, bank: ModelBank):
        if self.kind in BASELINES:
            if self.encoder_index >= bank.n_encoders or self.model_index >= bank.n_models:
                raise ValueError(
                    f"Scheme {self.name} references a composite model outside the "
                    f"{bank.n_encoders}x{bank.n_models} bank"
                )
        if self.kind is SchemeKind.BASELINE_TOPK and self.kappa > bank.label_count:
            raise ValueError(f"kappa={self.kappa} exceeds the {bank.label_count} labels")


@dataclass(frozen=True)
class EvaluationSettings:
    """Experiment constants shared by every SNR point."""

    bandwidth_hz: float = 30e6
    deadline_s: float = 0.150
    alpha: float = 0.01
    beta: float = 0.01
    loss: LossFunction = field(default_factory=LossFunction)
    grid: str = "subgrid"
    rate_table_size: int = 0
    chunk_size: int = 1024

    def channel(self, snr_ul_db: float, snr_dl_db: Optional[float] = None) -> ChannelConfig:
        return ChannelConfig.from_db(
            self.bandwidth_hz,
            snr_ul_db,
            snr_ul_db if snr_dl_db is None else snr_dl_db,
            self.deadline_s,
        )


@dataclass(frozen=True)
class FrameResult:
    frame_id: int
    snr_db: float
    encoder_index: int
    model_index: int
    rate_ul: float
    rate_dl: float
    d_ul: int
    set_size: int
    t_total: float
    met_deadline: bool
    loss: float
    relaxed_loss: float
    scheme: str = ""
    sample: int = -1
    bound: float = math.nan
    truncation_cap: int = 0

    def to_row(self) -> Dict[str, str]:
        return {
            "frame_id": str(self.frame_id),
            "snr_db": repr(float(self.snr_db)),
            "l": str(self.encoder_index + 1),
            "k": str(self.model_index + 1),
            "rate_ul": repr(float(self.rate_ul)),
            "rate_dl": repr(float(self.rate_dl)),
            "d_ul": str(self.d_ul),
            "set_size": str(self.set_size),
            "t_total_s": repr(float(self.t_total)),
            "met_deadline": "true" if self.met_deadline else "false",
            "loss": repr(float(self.loss)),
            "relaxed_loss": repr(float(self.relaxed_loss)),
            "scheme": self.scheme,
            "sample": str(self.sample),
            "bound": repr(float(self.bound)),
            "truncation_cap": str(self.truncation_cap),
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "FrameResult":
        return cls(
            frame_id=int(row["frame_id"]),
            snr_db=float(row["snr_db"]),
            encoder_index=int(row["l"]) - 1,
            model_index=int(row["k"]) - 1,
            rate_ul=float(row["rate_ul"]),
            rate_dl=float(row["rate_dl"]),
            d_ul=int(row["d_ul"]),
            set_size=int(row["set_size"]),
            t_total=float(row["t_total_s"]),
            met_deadline=row["met_deadline"] == "true",
            loss=float(row["loss"]),
            relaxed_loss=float(row["relaxed_loss"]),
            scheme=row.get("scheme", ""),
            sample=int(row.get("sample", -1)),
            bound=float(row.get("bound", "nan")),
            truncation_cap=int(row.get("truncation_cap", 0)),
        )


@dataclass(frozen=True)
class MetricsReport:
    """Frame-averaged metrics of one scheme at one SNR point.

    ``cond_loss`` and ``mean_set_size`` are averaged over the frames that met the
    deadline and are NaN when none did. Every ``*_se`` is a standard error of the mean.
    """

    scheme: str
    snr_db: float
    snr_dl_db: float
    n_frames: int
    cond_loss: float
    cond_loss_se: float
    violation_rate: float
    violation_rate_se: float
    mean_set_size: float
    mean_set_size_se: float
    relaxed_loss_mean: float
    relaxed_loss_se: float
    selection_histogram: Dict[Tuple[int, int], float] = field(default_factory=dict)
    feasible: Optional[bool] = None
    frames: Tuple[FrameResult, ...] = field(default=(), compare=False, repr=False)

    def to_row(self, config_hash: str = "", seed: Optional[int] = None) -> Dict[str, str]:
        return {
            "snr_db": _fmt(self.snr_db),
            "snr_dl_db": _fmt(self.snr_dl_db),
            "scheme": self.scheme,
            "n_frames": str(self.n_frames),
            "cond_loss": _fmt(self.cond_loss),
            "cond_loss_se": _fmt(self.cond_loss_se),
            "violation_rate": _fmt(self.violation_rate),
            "violation_rate_se": _fmt(self.violation_rate_se),
            "mean_set_size": _fmt(self.mean_set_size),
            "mean_set_size_se": _fmt(self.mean_set_size_se),
            "relaxed_loss": _fmt(self.relaxed_loss_mean),
            "relaxed_loss_se": _fmt(self.relaxed_loss_se),
            "feasible": "" if self.feasible is None else str(self.feasible).lower(),
            "config_hash": config_hash,
            "seed": "" if seed is None else str(seed),
        }


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def baseline_topk_set(scores, kappa: int) -> FrozenSet[int]:
    """The ``kappa`` highest-scoring labels; ties go to the lower label index."""
    scores = np.asarray(scores, dtype=float)
    if not 1 <= kappa <= scores.shape[-1]:
        raise ValueError(f"kappa must lie in [1, {scores.shape[-1]}], got {kappa}")
    return frozenset(int(y) for y in np.argsort(-scores, kind="stable")[:kappa])


@dataclass
class SchemePlan:
    """A scheme resolved at one SNR point: the fixed parts of its decision made up front."""

    spec: SchemeSpec
    catalog: ModelCatalog
    channel: ChannelConfig
    encoder_index: int
    model_index: Optional[int] = None
    threshold: Optional[float] = None
    bound: float = math.nan
    selection: Optional[SelectionOutcome] = None
    table: Optional[RateDecisionTable] = None

    @property
    def feasible(self) -> Optional[bool]:
        return self.selection.feasible if self.selection is not None else None

    def choose(self, rate_ul: float) -> Tuple[int, Optional[float], float]:
        """Edge model index, threshold and bound used for a frame with uplink rate ``rate_ul``."""
        if self.table is None:
            return self.model_index, self.threshold, self.bound
        decision = self.table.lookup(rate_ul)
        return decision.model_index, decision.threshold, decision.bound


def plan_scheme(
    spec: SchemeSpec,
    catalog: ModelCatalog,
    channel: ChannelConfig,
    settings: EvaluationSettings,
) -> SchemePlan:
    bank = catalog.bank
    spec.validate(bank)
    if spec.kind in BASELINES:
        l, k = spec.encoder_index, spec.model_index
        threshold = None
        if spec.kind is SchemeKind.BASELINE_CALIBRATED:
            entry = catalog.entry(l, k)
            if not entry.calibrated:
                raise ValueError(f"{bank.label(l, k)} could not be calibrated: {entry.error}")
            threshold = entry.calibration.threshold
        return SchemePlan(spec, catalog, channel, l, k, threshold)

    outcome = fixed_select(
        bank,
        None,
        None,
        settings.loss,
        settings.alpha,
        settings.beta,
        channel,
        grid=settings.grid,
        catalog=catalog,
    )
    if spec.kind is SchemeKind.FIXED:
        return SchemePlan(
            spec,
            catalog,
            channel,
            outcome.encoder_index,
            outcome.model_index,
            outcome.threshold,
            outcome.bound,
            selection=outcome,
        )
    table = RateDecisionTable(
        catalog,
        outcome.encoder_index,
        settings.beta,
        channel,
        grid=settings.grid,
        size=settings.rate_table_size,
    )
    return SchemePlan(
        spec, catalog, channel, outcome.encoder_index, selection=outcome, table=table
    )


def run_frame(
    plan: SchemePlan,
    dataset: ScoreDataset,
    sample: int,
    link: LinkDraw,
    settings: EvaluationSettings,
    frame_id: int = 0,
    snr_db: float = math.nan,
) -> FrameResult:
    """Simulate one frame: uplink, edge inference, set construction, downlink."""
    bank = plan.catalog.bank
    l = plan.encoder_index
    k, lam, bound = plan.choose(link.rate_ul)
    tau_ul, tau_f = bank.encoders[l].tau_ul, bank.models[k].tau_f
    d_ul = int(dataset.ul_sizes[l, sample])
    t_ul = uplink_time(tau_ul, d_ul, link.rate_ul)
    scores = dataset.scores[l, k, sample]

    cap = 0
    if plan.spec.kind is SchemeKind.BASELINE_TOPK:
        chosen = baseline_topk_set(scores, plan.spec.kappa)
    elif plan.spec.kind is SchemeKind.DYNAMIC_TRUNCATED:
        cap = truncation_cap(
            link.rate_dl, plan.channel.deadline_s, tau_ul, tau_f, t_ul - tau_ul, bank.d_lbl
        )
        chosen, _ = truncate(scores, lam, cap)
    else:
        chosen = prediction_set(scores, lam)

    t_total = t_ul + downlink_time(tau_f, len(chosen), bank.d_lbl, link.rate_dl)
    met = meets_deadline(t_total, plan.channel.deadline_s)
    loss_value = settings.loss(chosen, int(dataset.true_labels[sample]))
    return FrameResult(
        frame_id=frame_id,
        snr_db=snr_db,
        encoder_index=l,
        model_index=k,
        rate_ul=link.rate_ul,
        rate_dl=link.rate_dl,
        d_ul=d_ul,
        set_size=len(chosen),
        t_total=float(t_total),
        met_deadline=met,
        loss=loss_value,
        relaxed_loss=relaxed_loss(loss_value, met, settings.loss.gamma),
        scheme=plan.spec.name,
        sample=sample,
        bound=float(bound),
        truncation_cap=cap,
    )


def _mean_se(values: Sequence[float]) -> Tuple[float, float]:
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(
    frames: Sequence[FrameResult],
    scheme: Optional[str] = None,
    snr_db: Optional[float] = None,
    snr_dl_db: Optional[float] = None,
) -> MetricsReport:
    """Metrics of a batch of frames; conditional metrics use only frames meeting the deadline."""
    if not frames:
        raise ValueError("Cannot aggregate an empty frame list")
    met = [f for f in frames if f.met_deadline]
    cond_loss, cond_loss_se = _mean_se([f.loss for f in met])
    size, size_se = _mean_se([float(f.set_size) for f in met])
    violation, violation_se = _mean_se([0.0 if f.met_deadline else 1.0 for f in frames])
    relaxed, relaxed_se = _mean_se([f.relaxed_loss for f in frames])

    counts: Dict[Tuple[int, int], int] = {}
    for f in frames:
        key = (f.encoder_index, f.model_index)
        counts[key] = counts.get(key, 0) + 1
    histogram = {key: counts[key] / len(frames) for key in sorted(counts)}

    snr_db = frames[0].snr_db if snr_db is None else snr_db
    return MetricsReport(
        scheme=frames[0].scheme if scheme is None else scheme,
        snr_db=snr_db,
        snr_dl_db=snr_db if snr_dl_db is None else snr_dl_db,
        n_frames=len(frames),
        cond_loss=cond_loss,
        cond_loss_se=cond_loss_se,
        violation_rate=violation,
        violation_rate_se=violation_se,
        mean_set_size=size,
        mean_set_size_se=size_se,
        relaxed_loss_mean=relaxed,
        relaxed_loss_se=relaxed_se,
        selection_histogram=histogram,
    )


def _run_chunk(
    plan: SchemePlan,
    dataset: ScoreDataset,
    settings: EvaluationSettings,
    seed_seq: np.random.SeedSequence,
    start: int,
    count: int,
    snr_db: float,
) -> List[FrameResult]:
    rng = np.random.default_rng(seed_seq)
    samples = rng.integers(0, dataset.sample_count, size=count)
    gain_ul, gain_dl, rate_ul, rate_dl = sample_links(plan.channel, rng, count)
    frames = []
    for i in range(count):
        link = LinkDraw(
            float(gain_ul[i]), float(gain_dl[i]), float(rate_ul[i]), float(rate_dl[i])
        )
        frames.append(
            run_frame(plan, dataset, int(samples[i]), link, settings, start + i, snr_db)
        )
    return frames


def evaluate(
    scheme: SchemeSpec,
    catalog: ModelCatalog,
    evaluation: ScoreDataset,
    settings: EvaluationSettings,
    snr_db: Sequence[float],
    n_frames: int,
    seed: int,
    snr_dl_db: Optional[Sequence[float]] = None,
    workers: int = 1,
    keep_frames: bool = True,
) -> List[MetricsReport]:
    """One MetricsReport per SNR point.

    Frame streams depend only on ``seed`` and the position of the SNR point, so every
    scheme evaluated with the same seed sees the same samples and fading draws, and the
    result does not depend on ``workers``.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be at least 1, got {n_frames}")
    if evaluation.sample_count == 0:
        raise ValueError("The evaluation partition is empty")
    if not evaluation.is_labeled:
        raise ValueError("The evaluation partition must be labeled")
    if not len(snr_db):
        raise ValueError("The SNR grid is empty")
    if snr_dl_db is not None and len(snr_dl_db) != len(snr_db):
        raise ValueError("Uplink and downlink SNR grids must have the same length")
    evaluation.check_bank(catalog.bank)

    per_snr = np.random.SeedSequence(seed).spawn(len(snr_db))
    chunk = max(1, settings.chunk_size)
    reports = []
    for i, snr in enumerate(snr_db):
        snr_dl = snr if snr_dl_db is None else snr_dl_db[i]
        channel = settings.channel(snr, snr_dl)
        plan = plan_scheme(scheme, catalog, channel, settings)
        starts = list(range(0, n_frames, chunk))
        streams = per_snr[i].spawn(len(starts))
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            parts = list(
                pool.map(
                    lambda job: _run_chunk(
                        plan,
                        evaluation,
                        settings,
                        job[0],
                        job[1],
                        min(chunk, n_frames - job[1]),
                        float(snr),
                    ),
                    zip(streams, starts),
                )
            )
        frames = [f for part in parts for f in part]
        report = aggregate(frames, scheme.name, float(snr), float(snr_dl))
        report = replace(
            report, feasible=plan.feasible, frames=tuple(frames) if keep_frames else ()
        )
        logger.debug(
            "%s at %g dB: violation=%.4g cond_loss=%.4g size=%.3f",
            scheme.name,
            snr,
            report.violation_rate,
            report.cond_loss,
            report.mean_set_size,
        )
        reports.append(report)
    return reports


def _csv_text(columns: List[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def frames_csv(frames: Sequence[FrameResult]) -> str:
    return _csv_text(FRAME_COLUMNS, (f.to_row() for f in frames))


def read_frames_csv(path: Union[str, Path]) -> List[FrameResult]:
    with open(path, newline="", encoding="utf-8") as f:
        return [FrameResult.from_row(row) for row in csv.DictReader(f)]


def report_csv(reports: Sequence[MetricsReport], config_hash: str = "", seed=None) -> str:
    return _csv_text(REPORT_COLUMNS, (r.to_row(config_hash, seed) for r in reports))


def histogram_csv(
    reports: Sequence[MetricsReport], bank: ModelBank, config_hash: str = "", seed=None
) -> str:
    """Selection frequency of every composite model per (scheme, SNR) point."""
    columns = ["snr_db", "scheme", "l", "k", "encoder_id", "model_id", "frequency"]
    columns += ["config_hash", "seed"]
    rows = []
    for report in reports:
        for (l, k), freq in report.selection_histogram.items():
            rows.append(
                {
                    "snr_db": _fmt(report.snr_db),
                    "scheme": report.scheme,
                    "l": l + 1,
                    "k": k + 1,
                    "encoder_id": bank.encoders[l].id,
                    "model_id": bank.models[k].id,
                    "frequency": _fmt(freq),
                    "config_hash": config_hash,
                    "seed": "" if seed is None else seed,
                }
            )
    return _csv_text(columns, rows)
