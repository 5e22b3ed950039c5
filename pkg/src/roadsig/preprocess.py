"""Window preprocessing: low-pass, resample to 20 Hz, gravity alignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .core import (
    TARGET_RATE_HZ,
    WINDOW_SAMPLES,
    WINDOW_SECONDS,
    ProcessedWindow,
    RawWindow,
    RoadsigError,
)

GRAVITY = 9.80665
CUTOFF_HZ = 10.0
FILTER_ORDER = 4
GRAVITY_BAND = (0.5, 1.5)


class PreprocessError(RoadsigError):
    pass


class HighDynamicsError(PreprocessError):
    """Mean specific force is too far from 1 g to recover the gravity direction."""

    def __init__(self, magnitude: float):
        super().__init__(
            f"high-dynamics window: mean accel magnitude {magnitude:.3f} m/s^2 "
            f"outside [{GRAVITY_BAND[0]}g, {GRAVITY_BAND[1]}g]"
        )
        self.magnitude = magnitude


@dataclass(frozen=True)
class FilterSpec:
    """Causal Butterworth low-pass in second-order sections."""

    sample_rate_hz: float
    order: int = FILTER_ORDER
    cutoff_hz: float = CUTOFF_HZ
    sos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.cutoff_hz < self.sample_rate_hz / 2:
            raise PreprocessError(
                f"cutoff {self.cutoff_hz} Hz must be below Nyquist ({self.sample_rate_hz / 2} Hz)"
            )
        sos = sps.butter(self.order, self.cutoff_hz, btype="low", fs=self.sample_rate_hz, output="sos")
        sos.flags.writeable = False
        object.__setattr__(self, "sos", sos)

    def dc_gain(self) -> float:
        b, a = self.sos[:, :3], self.sos[:, 3:]
        return float(np.prod(b.sum(axis=1) / a.sum(axis=1)))


_FILTER_CACHE: dict[float, FilterSpec] = {}


def filter_for(rate_hz: float) -> FilterSpec:
    spec = _FILTER_CACHE.get(rate_hz)
    if spec is None:
        spec = _FILTER_CACHE[rate_hz] = FilterSpec(rate_hz)
    return spec


def lowpass(x, spec: FilterSpec) -> np.ndarray:
    """Filter each column of ``x`` causally, starting from steady state at ``x[0]``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise PreprocessError("signal contains non-finite values")
    sos = spec.sos.copy()  # sosfilt rejects read-only buffers
    zi = sps.sosfilt_zi(sos)[:, :, None] * x[0][None, None, :]
    y, _ = sps.sosfilt(sos, x, axis=0, zi=zi)
    return y[:, 0] if squeeze else y


def resample_20hz(x, rate_hz: float) -> np.ndarray:
    """Linearly interpolate a 2 s window onto ``t_k = k / 20``, k = 0..39."""
    x = np.asarray(x, dtype=float)
    n_needed = int(round(WINDOW_SECONDS * rate_hz))
    if len(x) < n_needed:
        raise PreprocessError(f"need {n_needed} samples for 2 s at {rate_hz} Hz, got {len(x)}")
    # positions in sample-index units; exact integers when rate is a multiple of 20 Hz
    pos = np.arange(WINDOW_SAMPLES) * (rate_hz / TARGET_RATE_HZ)
    lo = np.minimum(np.floor(pos).astype(int), len(x) - 1)
    hi = np.minimum(lo + 1, len(x) - 1)
    frac = (pos - lo)[:, None] if x.ndim == 2 else pos - lo
    return x[lo] + frac * (x[hi] - x[lo])


def alignment_rotation(mean_accel) -> np.ndarray:
    """Smallest rotation taking ``mean_accel`` onto +z."""
    u = np.asarray(mean_accel, dtype=float)
    u = u / np.linalg.norm(u)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(u, z)
    s = np.linalg.norm(axis)
    c = float(u @ z)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # half turn about x
    k = axis / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1 - c) * (kx @ kx)


def gravity_align(w) -> np.ndarray:
    """Rotate accel and gyro so mean accel is vertical, then remove gravity.

    Only roll and pitch are compensated; yaw stays in the device frame.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise PreprocessError("window contains non-finite values")
    mean_acc = w[:, :3].mean(axis=0)
    mag = float(np.linalg.norm(mean_acc))
    if not GRAVITY_BAND[0] * GRAVITY <= mag <= GRAVITY_BAND[1] * GRAVITY:
        raise HighDynamicsError(mag)
    rot = alignment_rotation(mean_acc)
    out = np.empty_like(w)
    out[:, :3] = w[:, :3] @ rot.T
    out[:, 3:] = w[:, 3:] @ rot.T
    out[:, 2] -= GRAVITY
    return out


def preprocess(raw: RawWindow) -> ProcessedWindow:
    filtered = lowpass(raw.data, filter_for(raw.rate_hz))
    return ProcessedWindow(gravity_align(resample_20hz(filtered, raw.rate_hz)))
