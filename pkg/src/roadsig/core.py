"""Domain types shared across the pipeline: IMU windows, routes and drives.

Column order for every IMU matrix is ``(ax, ay, az, gx, gy, gz)`` with
acceleration in m/s^2 and angular rate in rad/s. Positions live in a local
planar east-north frame, in meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

WINDOW_SECONDS = 2.0
TARGET_RATE_HZ = 20
WINDOW_SAMPLES = int(WINDOW_SECONDS * TARGET_RATE_HZ)  # 40
IMU_COLUMNS = ("ax", "ay", "az", "gx", "gy", "gz")
DEFAULT_CORRIDOR_M = 20.0
MIN_SEGMENT_M = 1.0


class RoadsigError(Exception):
    """Base class for all errors raised by this package."""


class RouteError(RoadsigError):
    pass


class OffRouteError(RouteError):
    """A position lies further from the route than the labeling corridor."""

    def __init__(self, distance: float, corridor: float):
        super().__init__(
            f"position is {distance:.3f} m from the route (corridor {corridor:.3f} m)"
        )
        self.distance = distance
        self.corridor = corridor


class ConfigError(RoadsigError):
    pass


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t, *self.accel, *self.gyro)):
            raise ValueError("IMU sample components must be finite")


@dataclass(frozen=True)
class RawWindow:
    """Two seconds of native-rate IMU data, shape ``(2 * rate_hz, 6)``."""

    rate_hz: float
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if self.rate_hz < TARGET_RATE_HZ:
            raise ValueError(f"rate_hz must be >= {TARGET_RATE_HZ}, got {self.rate_hz}")
        expected = int(round(WINDOW_SECONDS * self.rate_hz))
        if data.shape != (expected, 6):
            raise ValueError(f"raw window must be {expected}x6, got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class ProcessedWindow:
    """A preprocessed 40x6 window sampled at 20 Hz."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (WINDOW_SAMPLES, 6):
            raise ValueError(f"processed window must be 40x6, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("processed window contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("position must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class RouteModel:
    """A polyline route split into ``num_segments`` equal arc-length segments.

    Segment ids are 1-based. ``boundaries[k - 1]`` and ``boundaries[k]`` delimit
    segment ``k``; ``midpoints[k - 1]`` is its geometric midpoint.
    """

    polyline: np.ndarray
    length_m: float
    num_segments: int
    boundaries: np.ndarray
    midpoints: np.ndarray
    vertex_arclength: np.ndarray = field(repr=False)

    @property
    def segment_length(self) -> float:
        return self.length_m / self.num_segments

    def point_at(self, s) -> np.ndarray:
        """Point(s) on the polyline at arc length ``s`` (clamped to [0, L])."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length_m)
        x = np.interp(s, self.vertex_arclength, self.polyline[:, 0])
        y = np.interp(s, self.vertex_arclength, self.polyline[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, s: float) -> float:
        """Heading (rad, counter-clockwise from east) of the edge containing ``s``."""
        k = int(np.searchsorted(self.vertex_arclength, s, side="right")) - 1
        k = min(max(k, 0), len(self.polyline) - 2)
        # skip zero-length edges left by duplicate vertices
        while k < len(self.polyline) - 2 and self.vertex_arclength[k + 1] == self.vertex_arclength[k]:
            k += 1
        d = self.polyline[k + 1] - self.polyline[k]
        return math.atan2(d[1], d[0])

    def project(self, p) -> tuple[float, float]:
        """Nearest point on the polyline: returns ``(arc_length, distance)``.

        Ties between equally close edges resolve to the lowest edge index.
        """
        p = np.asarray(p, dtype=float).reshape(2)
        a = self.polyline[:-1]
        d = self.polyline[1:] - a
        seg_len2 = np.einsum("ij,ij->i", d, d)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.einsum("ij,ij->i", p - a, d) / seg_len2
        u = np.where(seg_len2 > 0, np.clip(u, 0.0, 1.0), 0.0)
        nearest = a + u[:, None] * d
        dist = np.hypot(*(nearest - p).T)
        k = int(np.argmin(dist))
        s = self.vertex_arclength[k] + u[k] * math.sqrt(seg_len2[k])
        return float(s), float(dist[k])

    def segment_of_arclength(self, s: float) -> int:
        """Half-open membership ``[start, end)``; ``s == L`` maps to the last segment."""
        k = int(np.searchsorted(self.boundaries, s, side="right"))
        return min(max(k, 1), self.num_segments)

    def with_segments(self, n: int) -> "RouteModel":
        return build_route(self.polyline, n)


def _arclength(polyline: np.ndarray) -> np.ndarray:
    steps = np.hypot(*np.diff(polyline, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(steps)])


def build_route(polyline, n: int) -> RouteModel:
    """Divide a polyline into ``n`` segments of equal arc length."""
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise RouteError("polyline must be an (M, 2) array with M >= 2")
    if not np.all(np.isfinite(pts)):
        raise RouteError("polyline contains non-finite coordinates")
    n = int(n)
    if n < 1:
        raise RouteError(f"segment count must be >= 1, got {n}")
    cum = _arclength(pts)
    length = float(cum[-1])
    if length <= 0.0:
        raise RouteError("polyline has zero length")
    if n > math.floor(length / MIN_SEGMENT_M):
        raise RouteError(
            f"{n} segments on a {length:.3f} m route would be shorter than {MIN_SEGMENT_M} m"
        )
    boundaries = np.arange(n + 1) * (length / n)
    boundaries[-1] = length
    mids_s = (np.arange(1, n + 1) - 0.5) * (length / n)
    mids = np.stack(
        [np.interp(mids_s, cum, pts[:, 0]), np.interp(mids_s, cum, pts[:, 1])], axis=1
    )
    for arr in (pts, boundaries, mids, cum):
        arr.flags.writeable = False
    return RouteModel(
        polyline=pts,
        length_m=length,
        num_segments=n,
        boundaries=boundaries,
        midpoints=mids,
        vertex_arclength=cum,
    )


def label_segment(route: RouteModel, p, corridor: float = DEFAULT_CORRIDOR_M) -> int:
    """Ground-truth segment id of position ``p``."""
    if isinstance(p, Position):
        p = p.as_array()
    s, dist = route.project(p)
    if dist > corridor:
        raise OffRouteError(dist, corridor)
    return route.segment_of_arclength(s)


@dataclass(frozen=True)
class Drive:
    """One recording: IMU samples at ``rate_hz`` plus optional 1 Hz ground truth."""

    t: np.ndarray
    imu: np.ndarray
    rate_hz: float
    gt_t: Optional[np.ndarray] = None
    gt_xy: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        imu = np.asarray(self.imu, dtype=float).reshape(-1, 6)
        if len(t) != len(imu):
            raise ValueError("time and IMU arrays differ in length")
        if len(t) > 1:
            dt = np.diff(t)
            if np.any(dt < 0):
                raise ValueError("sample times must be non-decreasing")
            nominal = 1.0 / self.rate_hz
            if np.any(np.abs(dt - nominal) > 0.01 * nominal):
                raise ValueError("sample spacing deviates from 1/rate by more than 1%")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "imu", imu)
        if (self.gt_t is None) != (self.gt_xy is None):
            raise ValueError("ground truth needs both times and positions")
        if self.gt_t is not None:
            object.__setattr__(self, "gt_t", np.asarray(self.gt_t, dtype=float))
            object.__setattr__(self, "gt_xy", np.asarray(self.gt_xy, dtype=float).reshape(-1, 2))

    @property
    def duration(self) -> float:
        return len(self.t) / self.rate_hz

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_t is not None

    def sample(self, i: int) -> ImuSample:
        row = self.imu[i]
        return ImuSample(float(self.t[i]), tuple(row[:3]), tuple(row[3:]))

    def position_at(self, t) -> np.ndarray:
        """Ground-truth position linearly interpolated at time(s) ``t``."""
        if not self.has_ground_truth:
            raise ValueError(f"drive {self.name!r} has no ground truth")
        t = np.asarray(t, dtype=float)
        x = np.interp(t, self.gt_t, self.gt_xy[:, 0])
        y = np.interp(t, self.gt_t, self.gt_xy[:, 1])
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True)
class Dataset:
    train: list
    val: list
    test: list
    route: RouteModel

    def __post_init__(self):
        names = [d.name for d in (*self.train, *self.val, *self.test)]
        named = [n for n in names if n]
        if len(set(named)) != len(named):
            raise ValueError("dataset splits must be disjoint")

    def split(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def check_corridor(self, corridor: float = DEFAULT_CORRIDOR_M) -> None:
        for drive in (*self.train, *self.val, *self.test):
            if not drive.has_ground_truth:
                continue
            for p in drive.gt_xy:
                _, dist = self.route.project(p)
                if dist > corridor:
                    raise OffRouteError(dist, corridor)


def window_count(drive: Drive) -> int:
    per = int(round(WINDOW_SECONDS * drive.rate_hz))
    return len(drive.t) // per


def window_stream(drive: Drive) -> Iterator[tuple[float, RawWindow]]:
    """Consecutive non-overlapping 2 s windows; a trailing partial window is dropped."""
    per = int(round(WINDOW_SECONDS * drive.rate_hz))
    for k in range(window_count(drive)):
        yield k * WINDOW_SECONDS, RawWindow(drive.rate_hz, drive.imu[k * per:(k + 1) * per])


def window_labels(drive: Drive, route: RouteModel, corridor: float = DEFAULT_CORRIDOR_M) -> np.ndarray:
    """Segment label of each window, taken at the window's midpoint time."""
    n = window_count(drive)
    t_mid = drive.t[0] + np.arange(n) * WINDOW_SECONDS + WINDOW_SECONDS / 2
    return np.array([label_segment(route, p, corridor) for p in drive.position_at(t_mid)], dtype=int)


def window_midtimes(drive: Drive) -> np.ndarray:
    return drive.t[0] + np.arange(window_count(drive)) * WINDOW_SECONDS + WINDOW_SECONDS / 2


# --- CSV ingestion -------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_drive_csv(drive: Drive, path, gt_path=None) -> None:
    path = Path(path)
    rows = ([_fmt(t), *map(_fmt, row)] for t, row in zip(drive.t, drive.imu))
    _write_csv(path, ("t", *IMU_COLUMNS), rows)
    if gt_path is not None and drive.has_ground_truth:
        rows = ([_fmt(t), _fmt(x), _fmt(y)] for t, (x, y) in zip(drive.gt_t, drive.gt_xy))
        _write_csv(Path(gt_path), ("t", "x", "y"), rows)


def _read_table(path, header: Sequence[str]) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or [h.strip() for h in got] != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite values")
    return arr


def read_drive_csv(path, gt_path=None, rate_hz: Optional[float] = None, name: str = "") -> Drive:
    arr = _read_table(path, ("t", *IMU_COLUMNS))
    if rate_hz is None:
        if len(arr) < 2:
            raise ValueError(f"{path}: cannot infer sample rate from fewer than 2 samples")
        rate_hz = float(round(1.0 / np.median(np.diff(arr[:, 0])), 6))
    gt_t = gt_xy = None
    if gt_path is not None:
        gt = _read_table(gt_path, ("t", "x", "y"))
        gt_t, gt_xy = gt[:, 0], gt[:, 1:]
    return Drive(arr[:, 0], arr[:, 1:], rate_hz, gt_t, gt_xy, name=name or Path(path).stem)


def write_route_csv(polyline, path) -> None:
    _write_csv(Path(path), ("x", "y"), ([_fmt(x), _fmt(y)] for x, y in np.asarray(polyline)))


def read_route_csv(path) -> np.ndarray:
    return _read_table(path, ("x", "y"))
