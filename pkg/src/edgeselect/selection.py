"""
Fixed and channel-adaptive selection of composite models, and prediction set truncation.

Fixed selection picks one (encoder, model) pair offline from the channel statistics.
Dynamic selection keeps the fixed encoder and re-picks the edge model per frame from the
observed uplink rate. Both use the same acceptance rule: a candidate replaces the best
so far if it meets the violation target with a smaller expected set, or if the best so
far misses the target and the candidate has a smaller bound.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Tuple

import numpy as np

from edgeselect.bounds import (
    BoundResult,
    InfeasibleTimingError,
    SizeOrderStats,
    order_stats,
    violation_bound_conditional,
    violation_bound_marginal,
)
from edgeselect.channel import ChannelConfig, shannon_rate
from edgeselect.conformal import (
    CalibratedModel,
    LossFunction,
    calibrate_all,
    corrected_risk_level,
    prediction_set,
)
from edgeselect.dataset import ModelBank, ScoreDataset

logger = logging.getLogger(__name__)

# Fading gains spanned by a rate decision table; Pr(|h|^2 < 1e-4) is 1e-4.
TABLE_GAIN_RANGE = (1e-4, 30.0)


class SelectionError(ValueError):
    """No composite model could be calibrated, so nothing can be selected."""


@dataclass(frozen=True)
class CandidateEvaluation:
    """One composite model as seen by a selection pass."""

    encoder_index: int
    model_index: int
    threshold: Optional[float]
    bound: float
    set_size: float
    status: str = "ok"
    bound_detail: Optional[BoundResult] = None


@dataclass(frozen=True)
class SelectionOutcome:
    """The selected composite model, its threshold, set-size estimate and violation bound."""

    encoder_index: int
    model_index: int
    threshold: float
    set_size_estimate: float
    bound: float
    feasible: bool
    candidates: Tuple[CandidateEvaluation, ...] = field(default=(), compare=False)

    def to_dict(self, bank: Optional[ModelBank] = None) -> Dict:
        data = {
            "l": self.encoder_index + 1,
            "k": self.model_index + 1,
            "lambda": float(self.threshold),
            "set_size_estimate": float(self.set_size_estimate),
            "bound": float(self.bound),
            "feasible": bool(self.feasible),
        }
        if bank is not None:
            data["encoder_id"] = bank.encoders[self.encoder_index].id
            data["model_id"] = bank.models[self.model_index].id
        return data


@dataclass(frozen=True)
class CatalogEntry:
    """Offline calibration and order statistics of one composite model."""

    encoder_index: int
    model_index: int
    tau_ul: float
    tau_f: float
    calibration: Optional[CalibratedModel]
    stats: Optional[SizeOrderStats]
    error: Optional[str] = None

    @property
    def calibrated(self) -> bool:
        return self.calibration is not None

    @property
    def set_size(self) -> float:
        return self.stats.mean_set_size if self.stats is not None else math.inf


class ModelCatalog:
    """Per-(l, k) thresholds and payload order statistics, computed once and shared.

    Everything here depends only on the calibration partitions, not on the channel, so
    fixed selection at any SNR and every per-frame dynamic decision reuse it read-only.
    """

    def __init__(
        self, bank: ModelBank, epsilon: float, entries: Dict[Tuple[int, int], CatalogEntry]
    ):
        self.bank = bank
        self.epsilon = epsilon
        self.entries = entries

    @classmethod
    def from_calibrations(
        cls,
        bank: ModelBank,
        unlabeled: ScoreDataset,
        calibrations: Dict[Tuple[int, int], object],
        epsilon: float,
        workers: int = 1,
    ) -> "ModelCatalog":
        unlabeled.check_bank(bank)

        def _entry(pair: Tuple[int, int]) -> CatalogEntry:
            l, k = pair
            result = calibrations.get(pair)
            common = dict(
                encoder_index=l,
                model_index=k,
                tau_ul=bank.encoders[l].tau_ul,
                tau_f=bank.models[k].tau_f,
            )
            if not isinstance(result, CalibratedModel):
                return CatalogEntry(calibration=None, stats=None, error=str(result), **common)
            return CatalogEntry(
                calibration=result, stats=order_stats(unlabeled, result, bank), **common
            )

        pairs = bank.combinations()
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            entries = list(pool.map(_entry, pairs))
        return cls(bank, epsilon, dict(zip(pairs, entries)))

    @classmethod
    def build(
        cls,
        bank: ModelBank,
        labeled: ScoreDataset,
        unlabeled: ScoreDataset,
        loss: LossFunction,
        epsilon: float,
        workers: int = 1,
    ) -> "ModelCatalog":
        calibrations = calibrate_all(labeled, bank, loss, epsilon, workers=workers)
        return cls.from_calibrations(bank, unlabeled, calibrations, epsilon, workers=workers)

    def entry(self, l: int, k: int) -> CatalogEntry:
        return self.entries[(l, k)]

    def calibrations(self) -> Dict[Tuple[int, int], CalibratedModel]:
        return {pair: e.calibration for pair, e in self.entries.items() if e.calibrated}


def accepts(bound: float, size: float, best_bound: float, best_size: float, beta: float) -> bool:
    """The acceptance rule shared by fixed and dynamic selection."""
    return (bound <= beta and size < best_size) or (best_bound >= beta and bound < best_bound)


def pick_candidate(evaluations: List[CandidateEvaluation], beta: float) -> CandidateEvaluation:
    best = None
    best_bound, best_size = math.inf, math.inf
    for ev in evaluations:
        if ev.threshold is None:
            continue
        if accepts(ev.bound, ev.set_size, best_bound, best_size, beta):
            best, best_bound, best_size = ev, ev.bound, ev.set_size
    if best is None:
        raise SelectionError("Every composite model failed calibration")
    return best


def _outcome(best: CandidateEvaluation, beta: float, evaluations) -> SelectionOutcome:
    return SelectionOutcome(
        encoder_index=best.encoder_index,
        model_index=best.model_index,
        threshold=float(best.threshold),
        set_size_estimate=float(best.set_size),
        bound=float(best.bound),
        feasible=bool(best.bound <= beta),
        candidates=tuple(evaluations),
    )


def _resolve_catalog(catalog, bank, labeled, unlabeled, loss, alpha, beta) -> ModelCatalog:
    epsilon = corrected_risk_level(alpha, beta)
    if catalog is None:
        return ModelCatalog.build(bank, labeled, unlabeled, loss, epsilon)
    if not math.isclose(catalog.epsilon, epsilon, rel_tol=1e-12):
        raise ValueError(
            f"Catalog was calibrated at epsilon={catalog.epsilon}, selection needs {epsilon}"
        )
    return catalog


def fixed_evaluations(
    catalog: ModelCatalog, config: ChannelConfig, grid: str = "subgrid"
) -> List[CandidateEvaluation]:
    """Marginal bound and set-size estimate of every composite model, l-major order."""
    evaluations = []
    for l, k in catalog.bank.combinations():
        entry = catalog.entry(l, k)
        if not entry.calibrated:
            evaluations.append(
                CandidateEvaluation(l, k, None, 1.0, math.inf, status="calibration-infeasible")
            )
            continue
        try:
            detail = violation_bound_marginal(entry.stats, entry.tau_ul, entry.tau_f, config, grid)
            status = "ok"
        except InfeasibleTimingError:
            detail, status = None, "timing-infeasible"
        evaluations.append(
            CandidateEvaluation(
                l,
                k,
                entry.calibration.threshold,
                detail.value if detail else 1.0,
                entry.set_size,
                status=status,
                bound_detail=detail,
            )
        )
    return evaluations


def fixed_select(
    bank: ModelBank,
    labeled: Optional[ScoreDataset],
    unlabeled: Optional[ScoreDataset],
    loss: LossFunction,
    alpha: float,
    beta: float,
    config: ChannelConfig,
    grid: str = "subgrid",
    catalog: Optional[ModelCatalog] = None,
) -> SelectionOutcome:
    """Pick one composite model offline from the channel statistics."""
    catalog = _resolve_catalog(catalog, bank, labeled, unlabeled, loss, alpha, beta)
    evaluations = fixed_evaluations(catalog, config, grid)
    best = pick_candidate(evaluations, beta)
    logger.debug(
        "Fixed selection: %s bound=%.4g size=%.3f",
        bank.label(best.encoder_index, best.model_index),
        best.bound,
        best.set_size,
    )
    return _outcome(best, beta, evaluations)


def dynamic_evaluations(
    catalog: ModelCatalog,
    encoder_index: int,
    config: ChannelConfig,
    rate_ul: float,
    grid: str = "subgrid",
) -> List[CandidateEvaluation]:
    evaluations = []
    for k in range(catalog.bank.n_models):
        entry = catalog.entry(encoder_index, k)
        if not entry.calibrated:
            evaluations.append(
                CandidateEvaluation(
                    encoder_index, k, None, 1.0, math.inf, status="calibration-infeasible"
                )
            )
            continue
        detail = violation_bound_conditional(
            entry.stats, entry.tau_ul, entry.tau_f, rate_ul, config, grid
        )
        evaluations.append(
            CandidateEvaluation(
                encoder_index,
                k,
                entry.calibration.threshold,
                detail.value,
                entry.set_size,
                bound_detail=detail,
            )
        )
    return evaluations


def dynamic_select(
    encoder_index: int,
    bank: ModelBank,
    labeled: Optional[ScoreDataset],
    unlabeled: Optional[ScoreDataset],
    loss: LossFunction,
    alpha: float,
    beta: float,
    config: ChannelConfig,
    rate_ul: float,
    grid: str = "subgrid",
    catalog: Optional[ModelCatalog] = None,
) -> SelectionOutcome:
    """Pick the edge model for the fixed encoder after observing the uplink rate."""
    if not rate_ul > 0:
        raise ValueError(f"rate_ul must be positive, got {rate_ul}")
    catalog = _resolve_catalog(catalog, bank, labeled, unlabeled, loss, alpha, beta)
    evaluations = dynamic_evaluations(catalog, encoder_index, config, rate_ul, grid)
    return _outcome(pick_candidate(evaluations, beta), beta, evaluations)


class RateDecisionTable:
    """Per-frame dynamic decisions, optionally precomputed on a log-spaced rate grid.

    With ``size=0`` every rate is decided exactly. Otherwise a frame uses the decision of
    the largest grid rate not above its observed rate. The conditional bound is
    non-increasing in the rate, so that decision's bound still upper-bounds the violation
    probability at the observed rate. Rates below the grid are decided exactly.
    """

    def __init__(
        self,
        catalog: ModelCatalog,
        encoder_index: int,
        beta: float,
        config: ChannelConfig,
        grid: str = "subgrid",
        size: int = 0,
    ):
        if size < 0 or size == 1:
            raise ValueError(f"size must be 0 (exact) or at least 2, got {size}")
        self.catalog = catalog
        self.encoder_index = encoder_index
        self.beta = beta
        self.config = config
        self.grid = grid
        self.rates = np.empty(0)
        if size:
            low, high = shannon_rate(
                np.array(TABLE_GAIN_RANGE), config.snr_ul, config.bandwidth_hz
            )
            self.rates = np.geomspace(low, high, size)
        self.decisions = [self._decide(rate) for rate in self.rates]

    def _decide(self, rate_ul: float) -> SelectionOutcome:
        evaluations = dynamic_evaluations(
            self.catalog, self.encoder_index, self.config, float(rate_ul), self.grid
        )
        return _outcome(pick_candidate(evaluations, self.beta), self.beta, ())

    def lookup(self, rate_ul: float) -> SelectionOutcome:
        if not rate_ul > 0:
            return self._outage()
        i = int(np.searchsorted(self.rates, rate_ul, side="right")) - 1
        if i < 0:
            return self._decide(rate_ul)
        return self.decisions[i]

    def _outage(self) -> SelectionOutcome:
        # Zero uplink rate: every bound is 1.
        evaluations = [
            CandidateEvaluation(
                self.encoder_index,
                k,
                e.calibration.threshold if e.calibrated else None,
                1.0,
                e.set_size,
            )
            for k, e in (
                (k, self.catalog.entry(self.encoder_index, k))
                for k in range(self.catalog.bank.n_models)
            )
        ]
        return _outcome(pick_candidate(evaluations, self.beta), self.beta, ())


def truncation_cap(
    rate_dl: float,
    deadline_s: float,
    tau_ul: float,
    tau_f: float,
    t_ul_actual: float,
    d_lbl: int,
) -> int:
    """Largest set size whose downlink fits in the time left, at least 1.

    ``t_ul_actual`` is the uplink transmission time D_ul / R_ul of the frame.
    """
    remaining = deadline_s - tau_ul - tau_f - t_ul_actual
    if not (np.isfinite(remaining) and remaining > 0 and rate_dl > 0):
        return 1
    return max(1, int(math.floor(rate_dl * remaining / d_lbl)))


class TruncationDecision(NamedTuple):
    cap: int
    applied: bool


def truncated_set(scores, lam: float, cap: int) -> FrozenSet[int]:
    """Threshold prediction set restricted to the ``cap`` highest-scoring labels."""
    if cap < 1:
        raise ValueError(f"cap must be at least 1, got {cap}")
    scores = np.asarray(scores, dtype=float)
    top = np.argsort(-scores, kind="stable")[:cap]
    return prediction_set(scores, lam) & frozenset(int(y) for y in top)


def truncate(scores, lam: float, cap: int) -> Tuple[FrozenSet[int], TruncationDecision]:
    """The truncated set and whether the cap removed any label."""
    full = prediction_set(scores, lam)
    if len(full) <= cap:
        return full, TruncationDecision(cap, False)
    return truncated_set(scores, lam, cap), TruncationDecision(cap, True)


def relaxed_loss(base_loss_value: float, met_deadline: bool, gamma: float) -> float:
    """The loss when the deadline is met, otherwise the maximum loss gamma."""
    return float(base_loss_value) if met_deadline else float(gamma)


def relaxed_risk_level(alpha: float, beta: float, gamma: float = 1.0) -> float:
    """alpha' = (1 - beta) alpha + beta gamma, met by any scheme meeting (alpha, beta)."""
    return (1.0 - beta) * alpha + beta * gamma
