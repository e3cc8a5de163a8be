"""
Nonparametric deadline-violation bounds from payload order statistics.

For a calibrated composite model, the uplink sizes and prediction-set downlink sizes of
the unlabeled calibration partition are sorted independently. A fresh sample falls below
the n-th uplink and m-th downlink order statistics jointly with probability at least
(n + m)/(N + 1) - 1, and given those payload caps the Rayleigh link meets the deadline
with a closed-form probability. Minimising 1 - success * coverage over (n, m) bounds the
violation probability, either marginally or conditioned on the uplink rate.

Any (n, m) yields a valid bound, so searching a subgrid keeps the bound valid and only
affects its tightness.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from edgeselect.channel import ChannelConfig
from edgeselect.conformal import CalibratedModel, set_sizes
from edgeselect.dataset import ModelBank, ScoreDataset

logger = logging.getLogger(__name__)

GRID_MODES = ("subgrid", "exact")
SUBGRID_AXIS_POINTS = 200
SUBGRID_TAIL = 200
_CHUNK_ELEMENTS = 2_000_000


class InfeasibleTimingError(ValueError):
    """tau_ul + tau_f leaves no time for a non-empty payload before the deadline."""


@dataclass(frozen=True)
class SizeOrderStats:
    """Independently sorted uplink and downlink payload sizes (bits) over the unlabeled set."""

    sorted_ul: np.ndarray
    sorted_dl: np.ndarray
    mean_set_size: float = float("nan")

    def __post_init__(self):
        if self.sorted_ul.shape != self.sorted_dl.shape or self.sorted_ul.ndim != 1:
            raise ValueError("Order statistic vectors must be 1-D with equal length")
        if np.any(np.diff(self.sorted_ul) < 0) or np.any(np.diff(self.sorted_dl) < 0):
            raise ValueError("Order statistic vectors must be sorted non-decreasing")
        self.sorted_ul.setflags(write=False)
        self.sorted_dl.setflags(write=False)

    @property
    def n_unlabeled(self) -> int:
        return self.sorted_ul.shape[0]


@dataclass(frozen=True)
class BoundResult:
    """A violation bound with its minimising 1-based order-statistic indices."""

    value: float
    n_star: int
    m_star: int
    mode: str = "marginal"
    rate_ul: Optional[float] = None

    def to_row(self, l: int, k: int) -> Dict:
        return {
            "l": l + 1,
            "k": k + 1,
            "bound": f"{self.value:.9g}",
            "n_star": self.n_star,
            "m_star": self.m_star,
            "mode": self.mode,
            "rate_ul": "" if self.rate_ul is None else f"{self.rate_ul:.9g}",
        }


def order_stats(
    unlabeled: ScoreDataset,
    calibrated: CalibratedModel,
    bank: ModelBank,
    d_lbl: Optional[int] = None,
) -> SizeOrderStats:
    """Sorted uplink sizes and sorted |set| * D_lbl downlink sizes of g_{l,k} on ``unlabeled``."""
    if unlabeled.sample_count == 0:
        raise ValueError("The unlabeled calibration partition is empty")
    d_lbl = bank.d_lbl if d_lbl is None else d_lbl
    l, k = calibrated.encoder_index, calibrated.model_index
    sizes = set_sizes(unlabeled.scores_for(l, k), calibrated.threshold)
    return SizeOrderStats(
        sorted_ul=np.sort(unlabeled.ul_sizes[l].astype(float)),
        sorted_dl=np.sort(sizes.astype(float) * d_lbl),
        mean_set_size=float(np.mean(sizes)),
    )


def joint_size_lb(n: int, m: int, n_u: int) -> float:
    """Lower bound (n + m)/(N_U + 1) - 1 on Pr(D_ul <= D_ul(n), D_dl <= D_dl(m))."""
    if not (1 <= n <= n_u and 1 <= m <= n_u):
        raise ValueError(f"Order statistic indices ({n}, {m}) outside 1..{n_u}")
    return (n + m) / (n_u + 1) - 1.0


def _budget(tau_ul: float, tau_f: float, config: ChannelConfig) -> float:
    return config.deadline_s - tau_ul - tau_f


def marginal_exponent(d_ul, d_dl, tau_ul: float, tau_f: float, config: ChannelConfig):
    """(1/SNR_ul + 1/SNR_dl)(1 - 2^((D_ul + D_dl)/(B (T - tau_ul - tau_f)))), never positive."""
    budget = _budget(tau_ul, tau_f, config)
    payload = np.asarray(d_ul, dtype=float) + np.asarray(d_dl, dtype=float)
    if budget < 0 or (budget == 0 and np.any(payload > 0)):
        raise InfeasibleTimingError(
            f"tau_ul + tau_f = {tau_ul + tau_f:.6g} s leaves no time before T = "
            f"{config.deadline_s:.6g} s"
        )
    scale = 1.0 / config.snr_ul + 1.0 / config.snr_dl
    if budget == 0:
        return np.zeros_like(payload) if payload.ndim else 0.0
    with np.errstate(over="ignore"):
        exponent = scale * (1.0 - np.exp2(payload / (config.bandwidth_hz * budget)))
    return exponent if exponent.ndim else float(exponent)


def conditional_exponent(
    d_ul, d_dl, tau_ul: float, tau_f: float, rate_ul: float, config: ChannelConfig
):
    """(1/SNR_dl)(1 - 2^(D_dl/(B (T - tau_ul - tau_f - D_ul/R_ul)))); -inf when no time remains."""
    if not rate_ul > 0:
        raise ValueError(f"rate_ul must be positive, got {rate_ul}")
    d_ul, d_dl = np.broadcast_arrays(np.asarray(d_ul, dtype=float), np.asarray(d_dl, dtype=float))
    remaining = _budget(tau_ul, tau_f, config) - d_ul / rate_ul
    exponent = np.full(d_dl.shape, -np.inf)
    ok = remaining > 0
    with np.errstate(over="ignore"):
        exponent[ok] = (1.0 / config.snr_dl) * (
            1.0 - np.exp2(d_dl[ok] / (config.bandwidth_hz * remaining[ok]))
        )
    return exponent if exponent.ndim else float(exponent)


def success_lb_marginal(d_ul, d_dl, tau_ul: float, tau_f: float, config: ChannelConfig) -> float:
    """Lower bound on Pr(T_tot <= T | D_ul, D_dl) over the fading of both links."""
    return float(np.exp(marginal_exponent(d_ul, d_dl, tau_ul, tau_f, config)))


def success_lb_conditional(
    d_ul, d_dl, tau_ul: float, tau_f: float, rate_ul: float, config: ChannelConfig
) -> float:
    """Lower bound on Pr(T_tot <= T | D_ul, D_dl, R_ul); 0 when the uplink alone is too late."""
    return float(np.exp(conditional_exponent(d_ul, d_dl, tau_ul, tau_f, rate_ul, config)))


def bound_grid_indices(n_u: int, mode: str = "subgrid") -> np.ndarray:
    """1-based order-statistic indices scanned on each axis.

    The subgrid is a geometric ladder plus the top indices, which equals the full grid
    whenever ``n_u`` is at most the tail length.
    """
    if mode not in GRID_MODES:
        raise ValueError(f"Unknown grid mode '{mode}', expected one of {GRID_MODES}")
    if mode == "exact" or n_u <= SUBGRID_TAIL:
        return np.arange(1, n_u + 1)
    ladder = np.rint(np.geomspace(1, n_u, SUBGRID_AXIS_POINTS)).astype(np.int64)
    tail = np.arange(n_u - SUBGRID_TAIL + 1, n_u + 1)
    return np.unique(np.concatenate((ladder, tail)))


def _minimize(
    success_rows: Callable[[np.ndarray], np.ndarray],
    idx: np.ndarray,
    n_u: int,
    mode: str,
    rate_ul: Optional[float],
) -> BoundResult:
    best_value = np.inf
    best = (int(idx[-1]), int(idx[-1]))
    chunk = max(1, _CHUNK_ELEMENTS // idx.size)
    for start in range(0, idx.size, chunk):
        rows = idx[start : start + chunk]
        coverage = (rows[:, None] + idx[None, :]) / (n_u + 1) - 1.0
        values = 1.0 - success_rows(rows) * coverage
        pos = int(np.argmin(values))
        value = float(values.flat[pos])
        if value < best_value:
            r, c = divmod(pos, idx.size)
            best_value = value
            best = (int(rows[r]), int(idx[c]))
    return BoundResult(
        value=float(min(1.0, max(0.0, best_value))),
        n_star=best[0],
        m_star=best[1],
        mode=mode,
        rate_ul=rate_ul,
    )


def violation_bound_marginal(
    stats: SizeOrderStats,
    tau_ul: float,
    tau_f: float,
    config: ChannelConfig,
    grid: str = "subgrid",
) -> BoundResult:
    """Upper bound on Pr(T_tot > T | g_{l,k}) over the channel statistics."""
    n_u = stats.n_unlabeled
    idx = bound_grid_indices(n_u, grid)
    ul = stats.sorted_ul[idx - 1]
    dl = stats.sorted_dl[idx - 1]
    # Raises before the scan if even the smallest payloads cannot fit.
    marginal_exponent(ul[0], dl[0], tau_ul, tau_f, config)
    budget = _budget(tau_ul, tau_f, config)

    def success_rows(rows: np.ndarray) -> np.ndarray:
        payload = stats.sorted_ul[rows - 1][:, None] + dl[None, :]
        if budget == 0:
            return (payload == 0).astype(float)
        return np.exp(marginal_exponent(payload, 0.0, tau_ul, tau_f, config))

    result = _minimize(success_rows, idx, n_u, "marginal", None)
    logger.debug(
        "Marginal bound %.6g at (n, m) = (%d, %d)", result.value, result.n_star, result.m_star
    )
    return result


def violation_bound_conditional(
    stats: SizeOrderStats,
    tau_ul: float,
    tau_f: float,
    rate_ul: float,
    config: ChannelConfig,
    grid: str = "subgrid",
) -> BoundResult:
    """Upper bound on Pr(T_tot > T | R_ul, g_{l,k}) for an observed uplink rate."""
    if not rate_ul > 0:
        raise ValueError(f"rate_ul must be positive, got {rate_ul}")
    n_u = stats.n_unlabeled
    idx = bound_grid_indices(n_u, grid)
    dl = stats.sorted_dl[idx - 1]

    def success_rows(rows: np.ndarray) -> np.ndarray:
        ul = stats.sorted_ul[rows - 1][:, None]
        return np.exp(conditional_exponent(ul, dl[None, :], tau_ul, tau_f, rate_ul, config))

    return _minimize(success_rows, idx, n_u, "conditional", float(rate_ul))
