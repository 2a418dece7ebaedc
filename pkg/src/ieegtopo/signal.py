"""Clinical band filtering and feature standardization.

Filtering is a per-channel 4th-order Butterworth band-pass applied forward
then backward, so the net phase response is zero. Segments are reflect-padded
by three times the effective filter order before filtering so transients on
short windows stay out of the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import butter, sosfiltfilt

FILTER_ORDER = 4


class InapplicableBandError(ValueError):
    """Band edge at or above Nyquist for the given sample rate."""


class Band(Enum):
    DELTA = ("delta", 0.5, 4.0)
    THETA = ("theta", 4.0, 8.0)
    ALPHA = ("alpha", 8.0, 13.0)
    BETA = ("beta", 13.0, 30.0)
    LOW_GAMMA = ("low_gamma", 30.0, 50.0)
    HIGH_GAMMA = ("high_gamma", 50.0, 100.0)
    BROADBAND = ("broadband", None, None)

    def __init__(self, label, low, high):
        self.label = label
        self.low = low
        self.high = high

    @staticmethod
    def from_name(name: str) -> "Band":
        key = name.strip().lower().replace(" ", "_").replace("-", "_")
        for band in Band:
            if band.label == key:
                return band
        raise ValueError(f"unknown band {name!r}")

    def applicable(self, sample_rate: float) -> bool:
        return self is Band.BROADBAND or self.high < sample_rate / 2


def bandpass(segment: np.ndarray, band: Band, sample_rate: float) -> np.ndarray:
    """Zero-phase band-pass of a channels x samples matrix.

    Broadband is the identity. Raises :class:`InapplicableBandError` when the
    band's upper edge reaches Nyquist, ValueError when the segment is shorter
    than 8x the filter order.
    """
    segment = np.asarray(segment, dtype=float)
    if band is Band.BROADBAND:
        return segment
    if not band.applicable(sample_rate):
        raise InapplicableBandError(
            f"band {band.label} ({band.low}-{band.high} Hz) needs Nyquist above "
            f"{band.high} Hz; sample rate is {sample_rate} Hz"
        )
    n = segment.shape[-1]
    if n < 8 * FILTER_ORDER:
        raise ValueError(f"segment too short to filter: {n} < {8 * FILTER_ORDER} samples")

    sos = butter(FILTER_ORDER, [band.low, band.high], btype="bandpass", fs=sample_rate, output="sos")
    padlen = 3 * (2 * sos.shape[0])  # 3x the effective band-pass order
    return sosfiltfilt(sos, segment, axis=-1, padtype="even", padlen=min(padlen, n - 1))


@dataclass
class Scaler:
    """Per-column z-scoring state fitted on training rows."""

    mean: np.ndarray
    std: np.ndarray  # zero for constant columns; those are centered only


def standardize_fit(train: np.ndarray) -> Scaler:
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValueError("standardization needs a 2-D matrix with at least 2 rows")
    return Scaler(mean=train.mean(axis=0), std=train.std(axis=0))


def standardize_apply(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    centered = X - scaler.mean
    divisor = np.where(scaler.std > 0, scaler.std, 1.0)
    return centered / divisor
