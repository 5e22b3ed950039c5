"""Evaluation measures, ideal error bounds and the segment-count sweep."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import RouteModel, label_segment

METRICS_FORMAT = "roadsig-metrics"
METRICS_VERSION = 1
METRIC_FIELDS = ("acc_raw", "acc", "two_acc_raw", "two_acc",
                 "max_dist_raw", "max_dist", "mean_dist_raw", "mean_dist")


@dataclass(frozen=True)
class MetricsReport:
    acc_raw: float
    acc: float
    two_acc_raw: float
    two_acc: float
    max_dist_raw: float
    max_dist: float
    mean_dist_raw: float
    mean_dist: float

    def __post_init__(self):
        for name in METRIC_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        body = {"format": METRICS_FORMAT, "version": METRICS_VERSION,
                "metrics": {k: float(v) for k, v in self.to_dict().items()}}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def ideal_bounds(length: float, n: int) -> tuple[float, float]:
    """Max and constant-speed mean error of a perfect segmentor: ``(L/2N, L/4N)``."""
    if n < 1 or not length > 0:
        raise ValueError("need n >= 1 and a positive length")
    return length / (2 * n), length / (4 * n)


def truth_labels(gt_positions, route: RouteModel) -> np.ndarray:
    return np.array([label_segment(route, p) for p in np.asarray(gt_positions, dtype=float)], dtype=int)


def metrics(raw_segments, corrected_segments, positions, gt_positions, route: RouteModel,
            truth: Optional[Sequence[int]] = None) -> MetricsReport:
    """All eight measures for one evaluation run.

    ``positions`` are the reported (corrected) positions and ``gt_positions``
    the ground truth at window midpoints. Raw distances use the midpoints of
    ``raw_segments``. ``truth`` may pass precomputed ground-truth labels.
    """
    raw = np.asarray(raw_segments, dtype=int)
    cor = np.asarray(corrected_segments, dtype=int)
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt_positions, dtype=float).reshape(-1, 2)
    if not len(raw) == len(cor) == len(pos) == len(gt):
        raise ValueError("metric inputs must have equal lengths")
    if len(raw) == 0:
        raise ValueError("metric inputs are empty")
    n = route.num_segments
    if raw.min() < 1 or cor.min() < 1 or raw.max() > n or cor.max() > n:
        raise ValueError(f"segments must lie in [1, {n}]")
    true = truth_labels(gt, route) if truth is None else np.asarray(truth, dtype=int)
    if len(true) != len(raw):
        raise ValueError("truth labels must match the predictions")
    d_raw = np.hypot(*(route.midpoints[raw - 1] - gt).T)
    d = np.hypot(*(pos - gt).T)
    return MetricsReport(
        acc_raw=float(np.mean(raw == true)),
        acc=float(np.mean(cor == true)),
        two_acc_raw=float(np.mean(np.abs(raw - true) <= 1)),
        two_acc=float(np.mean(np.abs(cor - true) <= 1)),
        max_dist_raw=float(d_raw.max()),
        max_dist=float(d.max()),
        mean_dist_raw=float(d_raw.mean()),
        mean_dist=float(d.mean()),
    )


def write_metrics(report: MetricsReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(report.to_json())


def read_metrics(path) -> MetricsReport:
    with open(path) as fh:
        body = json.load(fh)
    if body.get("format") != METRICS_FORMAT:
        raise ValueError(f"{path}: not a metrics file")
    if body.get("version", 0) > METRICS_VERSION:
        raise ValueError(f"{path}: metrics version {body['version']} is newer than supported {METRICS_VERSION}")
    return MetricsReport(**body["metrics"])


# --- segment-count sweep ---------------------------------------------------------

@dataclass
class SweepResult:
    candidates: list
    mean_dist: list  # validation mean_dist per candidate, nan when training failed
    chosen: int
    errors: dict = field(default_factory=dict)  # candidate -> error message


def choose_n(candidates, scores) -> int:
    """Argmin over finite scores; ties go to the smaller N."""
    best = None
    for n, score in sorted(zip(candidates, scores)):
        if math.isfinite(score) and (best is None or score < best[1]):
            best = (n, score)
    if best is None:
        raise ValueError("every sweep candidate failed")
    return best[0]


def sweep(candidates: Sequence[int], evaluate_n: Callable[[int], float]) -> SweepResult:
    """Score every candidate N with ``evaluate_n`` (train, then validation mean_dist).

    A candidate that raises is recorded with a nan score and does not stop the sweep.
    """
    candidates = [int(n) for n in candidates]
    if len(candidates) < 2:
        raise ValueError("a sweep needs at least two candidates")
    scores, errors = [], {}
    for n in candidates:
        try:
            scores.append(float(evaluate_n(n)))
        except Exception as exc:  # a failed candidate is reported, not fatal
            scores.append(float("nan"))
            errors[n] = f"{type(exc).__name__}: {exc}"
    return SweepResult(candidates, scores, choose_n(candidates, scores), errors)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "mean_dist"))
        for n, d in zip(result.candidates, result.mean_dist):
            w.writerow((n, repr(float(d))))
