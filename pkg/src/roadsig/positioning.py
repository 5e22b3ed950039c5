"""Positioning loop: preprocess, classify, constrain the transition, report the midpoint."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .core import (
    WINDOW_SECONDS,
    Drive,
    Position,
    ProcessedWindow,
    RawWindow,
    RouteModel,
    window_stream,
)
from .preprocess import PreprocessError, preprocess

FLAG_OK = 0
FLAG_PREPROCESS_FAILED = 1

Segmentor = Union[Callable[[ProcessedWindow], int], object]


def transition_logic(s_tilde: int, s_prev: int) -> int:
    """Accept the classifier output only if it stays or advances by one segment."""
    return s_tilde if s_tilde - s_prev in (0, 1) else s_prev


def midpoint(route: RouteModel, s: int) -> Position:
    if not 1 <= s <= route.num_segments:
        raise ValueError(f"segment {s} outside [1, {route.num_segments}]")
    x, y = route.midpoints[s - 1]
    return Position(float(x), float(y))


@dataclass(frozen=True)
class PositioningState:
    prev_segment: int = 1
    t: float = 0.0


@dataclass(frozen=True)
class StepResult:
    position: Position
    seg_raw: int
    seg_corrected: int
    state: PositioningState
    flag: int = FLAG_OK


def classify(segmentor, windows: np.ndarray) -> np.ndarray:
    """Run a segmentor over ``(n, 40, 6)`` windows.

    Objects with ``predict_batch`` are called once; plain callables per window.
    """
    if len(windows) == 0:
        return np.zeros(0, dtype=int)
    if hasattr(segmentor, "predict_batch"):
        out = segmentor.predict_batch(windows)
    else:
        out = [segmentor(ProcessedWindow(w)) for w in windows]
    return np.asarray(out, dtype=int)


def _check_segment(s: int, route: RouteModel) -> int:
    s = int(s)
    if not 1 <= s <= route.num_segments:
        raise ValueError(f"segmentor returned {s}, outside [1, {route.num_segments}]")
    return s


def step(state: PositioningState, raw: RawWindow, segmentor, route: RouteModel) -> StepResult:
    try:
        window = preprocess(raw)
    except PreprocessError:
        held = state.prev_segment
        new = PositioningState(held, state.t + WINDOW_SECONDS)
        return StepResult(midpoint(route, held), held, held, new, FLAG_PREPROCESS_FAILED)
    s_raw = _check_segment(classify(segmentor, window.data[None])[0], route)
    s = transition_logic(s_raw, state.prev_segment)
    return StepResult(midpoint(route, s), s_raw, s, PositioningState(s, state.t + WINDOW_SECONDS))


@dataclass
class Trajectory:
    """One row per 2 s window; ``t`` is the window start time."""

    t: np.ndarray
    xy: np.ndarray
    seg_raw: np.ndarray
    seg_corrected: np.ndarray
    flag: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def t_mid(self) -> np.ndarray:
        return self.t + WINDOW_SECONDS / 2


def preprocess_drive(drive: Drive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Window start times, processed windows ``(n, 40, 6)`` and preprocess-failure flags."""
    starts, wins, flags = [], [], []
    for t0, raw in window_stream(drive):
        starts.append(drive.t[0] + t0)
        try:
            wins.append(preprocess(raw).data)
            flags.append(FLAG_OK)
        except PreprocessError:
            wins.append(np.zeros((40, 6)))
            flags.append(FLAG_PREPROCESS_FAILED)
    return (np.array(starts, dtype=float), np.array(wins, dtype=float).reshape(-1, 40, 6),
            np.array(flags, dtype=int))


def apply_logic(seg_raw: np.ndarray, flags: np.ndarray, route: RouteModel,
                initial: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Corrected segments for a raw sequence; flagged windows hold the previous segment."""
    prev = initial
    raw_out = np.empty(len(seg_raw), dtype=int)
    corrected = np.empty(len(seg_raw), dtype=int)
    for i, (s_raw, flag) in enumerate(zip(seg_raw, flags)):
        if flag != FLAG_OK:
            s_raw = prev
        else:
            s_raw = _check_segment(s_raw, route)
        prev = transition_logic(s_raw, prev)
        raw_out[i], corrected[i] = s_raw, prev
    return raw_out, corrected


def run_drive(drive: Drive, segmentor, route: RouteModel, windows=None) -> Trajectory:
    """Positioning over every 2 s window of a drive, starting from segment 1.

    ``windows`` may carry the output of ``preprocess_drive`` to skip recomputation.
    """
    starts, wins, flags = windows if windows is not None else preprocess_drive(drive)
    seg = np.ones(len(starts), dtype=int)
    ok = flags == FLAG_OK
    if ok.any():
        seg[ok] = classify(segmentor, wins[ok])
    seg_raw, corrected = apply_logic(seg, flags, route)
    xy = route.midpoints[corrected - 1] if len(corrected) else np.zeros((0, 2))
    return Trajectory(starts, np.asarray(xy, dtype=float), seg_raw, corrected, flags)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "x", "y", "seg_raw", "seg_corrected", "flag"))
        for t, (x, y), sr, sc, fl in zip(traj.t, traj.xy, traj.seg_raw, traj.seg_corrected, traj.flag):
            w.writerow((repr(float(t)), repr(float(x)), repr(float(y)), int(sr), int(sc), int(fl)))
