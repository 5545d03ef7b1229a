"""Range-frequency Doppler map and auxiliary hand-crafted features.

The map is the per-range-bin DFT magnitude over a frame's time axis:
for each sensor channel and range bin r, output row f is
|sum_t S(t,r) * exp(-2j*pi*f*t/TW)|.  Phase is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .recording import RawFrame

RFDM = "rfdm"
RAW_IQ = "raw_iq"
SIGNAL_VARIATION_2D = "signal_variation_2d"

ENERGY_SOR = "energy_sor"
ENERGY_SOT = "energy_sot"
VARIATION_SOR = "variation_sor"
VARIATION_SOT = "variation_sot"
CENTRE_OF_MASS = "centre_of_mass"

AUX_KINDS = frozenset({ENERGY_SOR, ENERGY_SOT, VARIATION_SOR, VARIATION_SOT, CENTRE_OF_MASS})


@dataclass(eq=False)
class FeatureFrame:
    """Real-valued feature window derived from a RawFrame."""

    data: np.ndarray
    feature_kind: str = RFDM

    @property
    def shape(self):
        return self.data.shape


@dataclass(eq=False)
class AuxFeatureVector:
    values: np.ndarray
    kind: str

    @property
    def length(self) -> int:
        return self.values.size


def compute_rfdm(frame: RawFrame) -> FeatureFrame:
    """DFT magnitude over the time axis, per range bin and sensor channel."""
    data = frame.data
    if not np.all(np.isfinite(data)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(data))[0])
        raise ValidationError(f"non-finite sample at (t, r, sensor) = {bad}")
    spectrum = np.fft.fft(data, axis=0)
    return FeatureFrame(data=np.abs(spectrum), feature_kind=RFDM)


def normalize_frame(frame: FeatureFrame) -> FeatureFrame:
    """Divide each sensor channel by its max absolute value.

    All-zero channels pass through unchanged, so the result is always finite
    and idempotent under repeated application.
    """
    data = frame.data.astype(np.float64, copy=True)
    peaks = np.max(np.abs(data), axis=(0, 1))
    scale = np.where(peaks > 0, peaks, 1.0)
    data /= scale
    return FeatureFrame(data=data, feature_kind=frame.feature_kind)


def _collapse_sensors(frame: RawFrame) -> np.ndarray:
    # Multi-sensor frames are summed across sensors before any reduction.
    return frame.data.sum(axis=2)


def aux_feature(frame: RawFrame, kind: str) -> AuxFeatureVector:
    """Hand-crafted reductions of a frame.

    energy_sor[r]    = sum_t |S(t,r)|^2                       (length RP)
    energy_sot[t]    = sum_r |S(t,r)|^2                       (length TW)
    variation_sor[r] = sum_t |S(t+1,r) - S(t,r)|              (length RP)
    variation_sot[t] = sum_r |S(t+1,r) - S(t,r)|, last slot
                       zero-padded                            (length TW)
    centre_of_mass   = per time step (weighted mean range index, total
                       magnitude, weighted range variance)    (length 3*TW)
    """
    if kind not in AUX_KINDS:
        raise ValidationError(f"unknown auxiliary feature kind {kind!r}")
    s = _collapse_sensors(frame)
    tw = s.shape[0]
    if kind in (VARIATION_SOR, VARIATION_SOT) and tw < 2:
        raise ValidationError("variation features need at least 2 sweeps")

    if kind == ENERGY_SOR:
        values = np.sum(np.abs(s) ** 2, axis=0)
    elif kind == ENERGY_SOT:
        values = np.sum(np.abs(s) ** 2, axis=1)
    elif kind == VARIATION_SOR:
        values = np.sum(np.abs(np.diff(s, axis=0)), axis=0)
    elif kind == VARIATION_SOT:
        diffs = np.sum(np.abs(np.diff(s, axis=0)), axis=1)
        values = np.concatenate([diffs, [0.0]])
    else:
        weights = np.abs(s)
        total = weights.sum(axis=1)
        idx = np.arange(s.shape[1], dtype=np.float64)
        safe = np.where(total > 0, total, 1.0)
        mean = (weights * idx).sum(axis=1) / safe
        var = (weights * (idx[None, :] - mean[:, None]) ** 2).sum(axis=1) / safe
        mean = np.where(total > 0, mean, 0.0)
        var = np.where(total > 0, var, 0.0)
        values = np.stack([mean, total, var], axis=1).reshape(-1)
    return AuxFeatureVector(values=np.asarray(values, dtype=np.float64), kind=kind)


def signal_variation_2d(frame: RawFrame) -> FeatureFrame:
    """Sweep-to-sweep differences with real/imaginary parts as planes.

    Output shape (TW-1, RP, 2*C): for each sensor, the real plane then the
    imaginary plane of S(t+1,r) - S(t,r).
    """
    if frame.tw < 2:
        raise ValidationError("signal variation needs at least 2 sweeps")
    diff = np.diff(frame.data, axis=0)  # (TW-1, RP, C)
    planes = np.empty((diff.shape[0], diff.shape[1], 2 * diff.shape[2]))
    planes[:, :, 0::2] = diff.real
    planes[:, :, 1::2] = diff.imag
    return FeatureFrame(data=planes, feature_kind=SIGNAL_VARIATION_2D)
