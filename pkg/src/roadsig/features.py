"""Handcrafted features for the random-forest segmentor.

Every window yields 48 time-domain channels (base signals, derivatives,
integrals, guarded quotients and triplet norms) plus 6 Fourier-amplitude
channels, which are
summarised into a fixed vector of ``FEATURE_COUNT`` values. The layout is
fixed; ``feature_names()`` gives the name of every index.

Layout, in order:

* 12 statistics for each of the 48 time channels (576)
* mean absolute deviation of each of the 24 quotient channels (24)
* 11 statistics (no spectral entropy) for each Fourier channel (66)
* signal magnitude area of 8 channel triplets (8)
* Pearson correlation of the 3 pairs inside each triplet (24)
* AR(2) lag coefficients of each base channel (12)
"""

from __future__ import annotations

import csv
import hashlib
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import IMU_COLUMNS, TARGET_RATE_HZ, ProcessedWindow

EPS = 1e-6
# variance below (REL_TOL * max|x|)^2 counts as zero
REL_TOL = 1e-9

STAT_NAMES = (
    "mean", "std", "min", "max", "median", "mad", "m2",
    "skew", "kurt", "iqr", "spec_entropy", "absmax_over_absmin",
)
FOURIER_STAT_NAMES = tuple(s for s in STAT_NAMES if s != "spec_entropy")

BASE = IMU_COLUMNS
_IDX = {name: i for i, name in enumerate(BASE)}
QUOTIENT_PAIRS = (
    ("gx", "gy"), ("gy", "gx"), ("gz", "gx"), ("gx", "gz"), ("gy", "gz"), ("gz", "gy"),
    ("ax", "ay"), ("ay", "ax"), ("ax", "az"), ("az", "ax"), ("ay", "az"), ("az", "ay"),
)


# Euclidean norm channels, one per non-Fourier triplet
NORM_TRIPLETS = (("", "g"), ("", "a"), ("d_", "a"), ("d_", "g"), ("i_", "a"), ("i_", "g"))


def _time_channel_names() -> list[str]:
    names = list(BASE)
    names += [f"d_{b}" for b in BASE]
    names += [f"i_{b}" for b in BASE]
    names += [f"{a}/{b}" for a, b in QUOTIENT_PAIRS]
    names += [f"i_{a}/i_{b}" for a, b in QUOTIENT_PAIRS]
    names += [f"|{p}{s}|" for p, s in NORM_TRIPLETS]
    return names


TIME_CHANNELS = tuple(_time_channel_names())
FOURIER_CHANNELS = tuple(f"F_{b}" for b in BASE)
QUOTIENT_CHANNELS = TIME_CHANNELS[18:42]
assert len(TIME_CHANNELS) == 48

# triplets indexed into the combined (time + Fourier) channel list
TRIPLETS = (
    ("gx", "gy", "gz"),
    ("ax", "ay", "az"),
    ("d_ax", "d_ay", "d_az"),
    ("d_gx", "d_gy", "d_gz"),
    ("i_ax", "i_ay", "i_az"),
    ("i_gx", "i_gy", "i_gz"),
    ("F_gx", "F_gy", "F_gz"),
    ("F_ax", "F_ay", "F_az"),
)
CORRELATION_PAIRS = tuple(
    (t[i], t[j]) for t in TRIPLETS for i, j in ((0, 1), (0, 2), (1, 2))
)

FEATURE_COUNT = 48 * 12 + 24 + 6 * 11 + 8 + 24 + 12
assert FEATURE_COUNT == 710


@lru_cache(maxsize=1)
def feature_names() -> tuple[str, ...]:
    names = [f"{c}:{s}" for c in TIME_CHANNELS for s in STAT_NAMES]
    names += [f"{c}:mean_abs_dev" for c in QUOTIENT_CHANNELS]
    names += [f"{c}:{s}" for c in FOURIER_CHANNELS for s in FOURIER_STAT_NAMES]
    names += ["sma(" + ",".join(t) + ")" for t in TRIPLETS]
    names += [f"corr({a},{b})" for a, b in CORRELATION_PAIRS]
    names += [f"ar2({b}):lag{k}" for b in BASE for k in (1, 2)]
    assert len(names) == FEATURE_COUNT
    return tuple(names)


def layout_hash() -> str:
    return hashlib.sha256("\n".join(feature_names()).encode()).hexdigest()


def write_layout(path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "name"))
        w.writerows(enumerate(feature_names()))


def read_layout(path) -> tuple[str, ...]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["index", "name"]:
        raise ValueError(f"{path}: not a feature layout file")
    names = []
    for i, (idx, name) in enumerate(rows[1:]):
        if int(idx) != i:
            raise ValueError(f"{path}: index {idx} out of order")
        names.append(name)
    return tuple(names)


# --- channel derivation ---------------------------------------------------

def guarded_div(a, b, eps: float = EPS):
    denom = np.where(b < 0, -1.0, 1.0) * np.maximum(np.abs(b), eps)
    return a / denom


def _derive(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x: (n, 6, 40) base channels -> ((n, 48, 40) time, (n, 6, 21) Fourier)."""
    dt = 1.0 / TARGET_RATE_HZ
    deriv = np.empty_like(x)
    deriv[..., :-1] = np.diff(x, axis=-1) / dt
    deriv[..., -1] = deriv[..., -2]
    integ = np.zeros_like(x)
    integ[..., 1:] = np.cumsum((x[..., 1:] + x[..., :-1]) * (dt / 2), axis=-1)
    num = [_IDX[a] for a, _ in QUOTIENT_PAIRS]
    den = [_IDX[b] for _, b in QUOTIENT_PAIRS]
    quot = guarded_div(x[:, num], x[:, den])
    iquot = guarded_div(integ[:, num], integ[:, den])
    blocks = {"": x, "d_": deriv, "i_": integ}
    norms = [
        np.sqrt(np.sum(blocks[p][:, (0, 1, 2) if s == "a" else (3, 4, 5)] ** 2, axis=1))
        for p, s in NORM_TRIPLETS
    ]
    time = np.concatenate([x, deriv, integ, quot, iquot, np.stack(norms, axis=1)], axis=1)
    fourier = np.abs(np.fft.rfft(x, axis=-1))
    return time, fourier


def derive_channels(w: ProcessedWindow | np.ndarray) -> dict[str, np.ndarray]:
    """Named derived channels for one window (48 time + 6 Fourier)."""
    data = w.data if isinstance(w, ProcessedWindow) else np.asarray(w, dtype=float)
    time, fourier = _derive(data.T[None])
    out = dict(zip(TIME_CHANNELS, time[0]))
    out.update(zip(FOURIER_CHANNELS, fourier[0]))
    return out


# --- statistics -----------------------------------------------------------

def _zero_var(m2, x):
    scale = np.max(np.abs(x), axis=-1)
    return m2 <= (REL_TOL * scale) ** 2


def spectral_entropy(x) -> np.ndarray:
    p = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    p = p / np.maximum(p.sum(axis=-1, keepdims=True), EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=-1)
    return h / np.log(p.shape[-1])


def pearson(a, b) -> np.ndarray:
    """Row-wise Pearson correlation; 0 when either side has zero variance."""
    da = a - a.mean(axis=-1, keepdims=True)
    db = b - b.mean(axis=-1, keepdims=True)
    va = np.mean(da * da, axis=-1)
    vb = np.mean(db * db, axis=-1)
    degenerate = _zero_var(va, a) | _zero_var(vb, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.mean(da * db, axis=-1) / np.sqrt(va * vb)
    return np.where(degenerate, 0.0, np.clip(r, -1.0, 1.0))


def stat_features(c, with_entropy: bool = True) -> np.ndarray:
    """Summary statistics over the last axis (12 values, 11 without entropy)."""
    c = np.asarray(c, dtype=float)
    mean = c.mean(axis=-1)
    dev = c - mean[..., None]
    m2c = np.mean(dev**2, axis=-1)
    flat = _zero_var(m2c, c)
    safe = np.where(flat, 1.0, m2c)
    z = dev / np.sqrt(safe)[..., None]  # standardize first so tiny scales do not underflow
    skew = np.where(flat, 0.0, np.mean(z**3, axis=-1))
    kurt = np.where(flat, 0.0, np.mean(z**4, axis=-1))
    q25, median, q75 = np.percentile(c, [25, 50, 75], axis=-1)
    mad = np.median(np.abs(c - median[..., None]), axis=-1)
    absval = np.abs(c)
    cols = [
        mean,
        np.sqrt(m2c),
        c.min(axis=-1),
        c.max(axis=-1),
        median,
        mad,
        np.mean(c**2, axis=-1),
        skew,
        kurt,
        q75 - q25,
    ]
    if with_entropy:
        cols.append(spectral_entropy(c))
    cols.append(absval.max(axis=-1) / np.maximum(absval.min(axis=-1), EPS))
    return np.stack(cols, axis=-1)


def ar2_coefficients(x) -> np.ndarray:
    """Least-squares ``x_k = a1 x_{k-1} + a2 x_{k-2}`` (no intercept), over the last axis."""
    x = np.asarray(x, dtype=float)
    y, l1, l2 = x[..., 2:], x[..., 1:-1], x[..., :-2]
    g11 = np.sum(l1 * l1, axis=-1)
    g12 = np.sum(l1 * l2, axis=-1)
    g22 = np.sum(l2 * l2, axis=-1)
    gram = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
    rhs = np.stack([np.sum(l1 * y, axis=-1), np.sum(l2 * y, axis=-1)], -1)
    # minimum-norm solution copes with rank-deficient (flat or zero) channels
    return np.einsum("...ij,...j->...i", np.linalg.pinv(gram, rcond=1e-12), rhs)


def extract_batch(windows) -> np.ndarray:
    """Feature matrix ``(n, FEATURE_COUNT)`` for windows of shape ``(n, 40, 6)``."""
    w = np.asarray(windows, dtype=float)
    if w.ndim == 2:
        w = w[None]
    if w.shape[1:] != (40, 6):
        raise ValueError(f"expected windows of shape (n, 40, 6), got {w.shape}")
    base = np.swapaxes(w, 1, 2)
    time, fourier = _derive(base)
    n = len(w)

    parts = [stat_features(time).reshape(n, -1)]
    quot = time[:, 18:42]
    parts.append(np.mean(np.abs(quot - quot.mean(axis=-1, keepdims=True)), axis=-1))
    parts.append(stat_features(fourier, with_entropy=False).reshape(n, -1))

    named = dict(zip(TIME_CHANNELS, np.swapaxes(time, 0, 1)))
    named.update(zip(FOURIER_CHANNELS, np.swapaxes(fourier, 0, 1)))
    sma = [
        np.mean(np.abs(named[a]) + np.abs(named[b]) + np.abs(named[c]), axis=-1)
        for a, b, c in TRIPLETS
    ]
    parts.append(np.stack(sma, axis=1))
    parts.append(np.stack([pearson(named[a], named[b]) for a, b in CORRELATION_PAIRS], axis=1))
    parts.append(ar2_coefficients(base).reshape(n, -1))
    return np.concatenate(parts, axis=1)


def extract(w: ProcessedWindow | np.ndarray) -> np.ndarray:
    data = w.data if isinstance(w, ProcessedWindow) else w
    return extract_batch(np.asarray(data)[None])[0]
