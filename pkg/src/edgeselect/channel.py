"""
Quasi-static Rayleigh-fading uplink/downlink and the frame timing model.

Gains |h|^2 are unit-mean exponential, drawn independently per frame and per direction.
Rates follow the Shannon capacity B log2(1 + |h|^2 SNR). Infinite delays are legal and
always violate the deadline.
"""

from dataclasses import dataclass
from typing import List

import numpy as np


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelConfig:
    """Bandwidth (Hz), average linear SNRs and the frame deadline (seconds)."""

    bandwidth_hz: float
    snr_ul: float
    snr_dl: float
    deadline_s: float

    def __post_init__(self):
        for name in ("bandwidth_hz", "snr_ul", "snr_dl", "deadline_s"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    @classmethod
    def from_db(
        cls, bandwidth_hz: float, snr_ul_db: float, snr_dl_db: float, deadline_s: float
    ) -> "ChannelConfig":
        return cls(
            bandwidth_hz=bandwidth_hz,
            snr_ul=float(db_to_linear(snr_ul_db)),
            snr_dl=float(db_to_linear(snr_dl_db)),
            deadline_s=deadline_s,
        )


@dataclass(frozen=True)
class LinkDraw:
    """One frame's fading gains and the rates they support (bits/s)."""

    gain_ul: float
    gain_dl: float
    rate_ul: float
    rate_dl: float


def shannon_rate(gain, snr: float, bandwidth_hz: float):
    return bandwidth_hz * np.log2(1.0 + np.asarray(gain, dtype=float) * snr)


def link_from_gains(config: ChannelConfig, gain_ul: float, gain_dl: float) -> LinkDraw:
    return LinkDraw(
        gain_ul=float(gain_ul),
        gain_dl=float(gain_dl),
        rate_ul=float(shannon_rate(gain_ul, config.snr_ul, config.bandwidth_hz)),
        rate_dl=float(shannon_rate(gain_dl, config.snr_dl, config.bandwidth_hz)),
    )


def sample_link(config: ChannelConfig, rng: np.random.Generator) -> LinkDraw:
    """Draw one frame's uplink and downlink."""
    gain_ul, gain_dl = rng.exponential(1.0, size=2)
    return link_from_gains(config, gain_ul, gain_dl)


def sample_links(config: ChannelConfig, rng: np.random.Generator, n: int):
    """Draw ``n`` frames at once; returns (gain_ul, gain_dl, rate_ul, rate_dl) arrays.

    The draw order matches ``n`` successive calls to ``sample_link``.
    """
    gains = rng.exponential(1.0, size=(n, 2))
    gain_ul, gain_dl = gains[:, 0], gains[:, 1]
    return (
        gain_ul,
        gain_dl,
        shannon_rate(gain_ul, config.snr_ul, config.bandwidth_hz),
        shannon_rate(gain_dl, config.snr_dl, config.bandwidth_hz),
    )


def _transfer_time(payload, rate):
    payload, rate = np.broadcast_arrays(
        np.asarray(payload, dtype=float), np.asarray(rate, dtype=float)
    )
    t = np.full(payload.shape, np.inf)
    np.divide(payload, rate, out=t, where=rate > 0)
    t = np.where(payload == 0, 0.0, t)
    return t if t.ndim else float(t)


def uplink_time(tau_ul, d_ul, rate_ul):
    """T_ul = tau_ul + D_ul / R_ul; infinite when the rate is 0 and the payload is not."""
    return tau_ul + _transfer_time(d_ul, rate_ul)


def downlink_time(tau_f, set_size, d_lbl, rate_dl):
    """T_dl = tau_f + |set| D_lbl / R_dl, with the same infinity convention."""
    return tau_f + _transfer_time(np.asarray(set_size, dtype=float) * d_lbl, rate_dl)


def meets_deadline(t_total, deadline_s):
    """True iff the frame finishes no later than the deadline."""
    if np.ndim(t_total):
        return np.asarray(t_total) <= deadline_s
    return bool(t_total <= deadline_s)


def spawn_generators(seed: int, n: int) -> List[np.random.Generator]:
    """Independent generators split deterministically from one master seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(n)]
