"""
Conformal risk control for threshold prediction sets.

A prediction set keeps every label whose score is at least 1 - lambda. Calibration picks
the smallest lambda whose empirical risk on the labeled calibration partition stays below
the finite-sample corrected level epsilon - (gamma - epsilon) / N.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Optional, Tuple, Union

import numpy as np

from edgeselect.dataset import ModelBank, ScoreDataset

logger = logging.getLogger(__name__)


class LossKind(str, Enum):
    MISS_DETECTION_01 = "miss_detection_01"
    FALSE_NEGATIVE_RATE = "false_negative_rate"


class CalibrationInfeasibleError(ValueError):
    """No threshold meets the corrected risk level, not even lambda = 1."""

    def __init__(self, epsilon: float, n_calibration: int, gamma: float, target: float):
        self.epsilon = epsilon
        self.n_calibration = n_calibration
        self.gamma = gamma
        self.target = target
        super().__init__(
            f"epsilon={epsilon:g} is infeasible with N={n_calibration} calibration samples "
            f"(corrected level {target:.6g}; need epsilon >= gamma/(N+1) = "
            f"{gamma / (n_calibration + 1):.6g})"
        )


@dataclass(frozen=True)
class LossFunction:
    """A loss that never increases when the prediction set grows, bounded by ``gamma``.

    Labels are single classes, so ``|Y \\ set| / |Y|`` of the false negative rate equals
    the 0-1 miss indicator; both are scaled by ``gamma``.
    """

    kind: LossKind = LossKind.MISS_DETECTION_01
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def from_inclusion(self, included) -> np.ndarray:
        """Per-sample loss given whether the true label is in the prediction set."""
        included = np.asarray(included, dtype=bool)
        return np.where(included, 0.0, self.gamma)

    def __call__(self, prediction: FrozenSet[int], label: int) -> float:
        return 0.0 if int(label) in prediction else float(self.gamma)


@dataclass(frozen=True)
class CalibratedModel:
    """Composite model g_{l,k} with its calibrated threshold."""

    encoder_index: int
    model_index: int
    threshold: float
    epsilon: float
    n_calibration: int
    gamma: float = 1.0
    empirical_risk: float = 0.0

    def to_dict(self, bank: Optional[ModelBank] = None) -> Dict:
        data = {
            "encoder_id": (
                bank.encoders[self.encoder_index].id if bank else str(self.encoder_index)
            ),
            "model_id": bank.models[self.model_index].id if bank else str(self.model_index),
            "lambda": float(self.threshold),
            "epsilon": float(self.epsilon),
            "n_calibration": int(self.n_calibration),
        }
        data["gamma"] = float(self.gamma)
        data["empirical_risk"] = float(self.empirical_risk)
        return data

    @classmethod
    def from_dict(cls, data: Dict, bank: ModelBank) -> "CalibratedModel":
        enc = [e.id for e in bank.encoders].index(data["encoder_id"])
        model = [m.id for m in bank.models].index(data["model_id"])
        return cls(
            encoder_index=enc,
            model_index=model,
            threshold=float(data["lambda"]),
            epsilon=float(data["epsilon"]),
            n_calibration=int(data["n_calibration"]),
            gamma=float(data.get("gamma", 1.0)),
            empirical_risk=float(data.get("empirical_risk", 0.0)),
        )


def prediction_set(scores, lam: float) -> FrozenSet[int]:
    """Labels whose score is at least ``1 - lam``."""
    scores = np.asarray(scores, dtype=float)
    return frozenset(int(y) for y in np.flatnonzero(scores >= 1.0 - lam))


def prediction_set_mask(scores: np.ndarray, lam: float) -> np.ndarray:
    """Boolean membership matrix of the prediction sets of every row of ``scores``."""
    return np.asarray(scores) >= 1.0 - lam


def set_sizes(scores: np.ndarray, lam: float) -> np.ndarray:
    return prediction_set_mask(scores, lam).sum(axis=-1)


def corrected_risk_level(alpha: float, beta: float) -> float:
    """Calibration level epsilon = alpha (1 - beta).

    Keeps the loss conditioned on meeting the deadline at or below alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    return alpha * (1.0 - beta)


def _true_label_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ValueError(
            f"scores {scores.shape} and labels {labels.shape} have inconsistent dimensions"
        )
    return scores[np.arange(scores.shape[0]), labels]


def empirical_risk(scores: np.ndarray, labels: np.ndarray, loss: LossFunction, lam: float) -> float:
    """Mean loss of the threshold prediction sets at ``lam``."""
    true_scores = _true_label_scores(scores, labels)
    return float(np.mean(loss.from_inclusion(true_scores >= 1.0 - lam)))


def candidate_thresholds(true_scores: np.ndarray) -> np.ndarray:
    """Sorted thresholds at which the empirical risk can change, plus 0 and 1.

    Each candidate 1 - s is moved by whole ulps to the smallest float lambda for which
    score s satisfies ``score >= 1 - lambda``; plain subtraction can land either side.
    """
    unique = np.unique(true_scores)
    lams = 1.0 - unique
    for _ in range(4):
        excluded = (1.0 - lams) > unique
        if not excluded.any():
            break
        lams[excluded] = np.nextafter(lams[excluded], np.inf)
    for _ in range(4):
        lower = np.nextafter(lams, -np.inf)
        still_in = (unique >= 1.0 - lower) & (lams > 0.0)
        if not still_in.any():
            break
        lams[still_in] = lower[still_in]
    lams = np.clip(lams, 0.0, 1.0)
    return np.unique(np.concatenate(([0.0], lams, [1.0])))


def calibrate(
    scores: np.ndarray,
    labels: np.ndarray,
    loss: LossFunction,
    epsilon: float,
    encoder_index: int = 0,
    model_index: int = 0,
) -> CalibratedModel:
    """Smallest lambda whose empirical risk is <= epsilon - (gamma - epsilon) / N."""
    true_scores = _true_label_scores(scores, labels)
    n = true_scores.shape[0]
    if n < 1:
        raise ValueError("Calibration needs at least one labeled sample")
    if epsilon >= loss.gamma:
        raise ValueError(f"epsilon={epsilon} must be smaller than gamma={loss.gamma}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    target = epsilon - (loss.gamma - epsilon) / n

    lams = candidate_thresholds(true_scores)
    # Misses at lambda are the true scores strictly below 1 - lambda.
    sorted_scores = np.sort(true_scores)
    misses = np.searchsorted(sorted_scores, 1.0 - lams, side="left")
    risks = loss.gamma * misses / n
    ok = np.flatnonzero(risks <= target)
    if ok.size == 0:
        raise CalibrationInfeasibleError(epsilon, n, loss.gamma, target)
    best = ok[0]
    logger.debug(
        "Calibrated (%d, %d): lambda=%.6g risk=%.6g target=%.6g",
        encoder_index,
        model_index,
        lams[best],
        risks[best],
        target,
    )
    return CalibratedModel(
        encoder_index=encoder_index,
        model_index=model_index,
        threshold=float(lams[best]),
        epsilon=float(epsilon),
        n_calibration=int(n),
        gamma=float(loss.gamma),
        empirical_risk=float(risks[best]),
    )


CalibrationResult = Union[CalibratedModel, CalibrationInfeasibleError]


def calibrate_all(
    labeled: ScoreDataset,
    bank: ModelBank,
    loss: LossFunction,
    epsilon: float,
    workers: int = 1,
) -> Dict[Tuple[int, int], CalibrationResult]:
    """Calibrate every composite model; infeasible ones map to their error."""
    if not labeled.is_labeled:
        raise ValueError("Calibration requires a labeled partition")
    labeled.check_bank(bank)

    def _one(pair: Tuple[int, int]) -> CalibrationResult:
        l, k = pair
        try:
            return calibrate(labeled.scores_for(l, k), labeled.true_labels, loss, epsilon, l, k)
        except CalibrationInfeasibleError as err:
            logger.warning("Calibration infeasible for %s: %s", bank.label(l, k), err)
            return err

    pairs = bank.combinations()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_one, pairs))
    return dict(zip(pairs, results))
