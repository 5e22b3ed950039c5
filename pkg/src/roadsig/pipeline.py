"""Glue shared by the CLI, the sweep and the acceptance suite.

Drives are windowed and preprocessed once; features are computed once and
reused across segment counts, since only the labels depend on N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cnn, features, forest
from .core import Drive, RouteModel, build_route
from .evaluate import MetricsReport, metrics, sweep, truth_labels
from .positioning import FLAG_OK, Trajectory, apply_logic, classify, preprocess_drive
from .segmentors import CnnSegmentor, ForestSegmentor

SEGMENTOR_KINDS = ("forest", "cnn")


@dataclass
class DriveWindows:
    drive: Drive
    starts: np.ndarray
    windows: np.ndarray  # (n, 40, 6)
    flags: np.ndarray
    gt_mid: Optional[np.ndarray]  # ground truth at window midpoints
    _features: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> np.ndarray:
        return self.flags == FLAG_OK

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = (features.extract_batch(self.windows) if len(self.windows)
                              else np.zeros((0, features.FEATURE_COUNT)))
        return self._features

    def labels(self, route: RouteModel) -> np.ndarray:
        if self.gt_mid is None:
            raise ValueError(f"drive {self.drive.name!r} has no ground truth")
        return truth_labels(self.gt_mid, route)


def prepare(drive: Drive) -> DriveWindows:
    starts, wins, flags = preprocess_drive(drive)
    gt = drive.position_at(starts + 1.0) if drive.has_ground_truth else None
    return DriveWindows(drive, starts, wins, flags, gt)


def prepare_all(drives: Sequence[Drive]) -> list[DriveWindows]:
    return [prepare(d) for d in drives]


def training_set(prepared: Sequence[DriveWindows], route: RouteModel, use_features: bool):
    """Inputs and 1-based labels of every valid window."""
    xs, ys = [], []
    for p in prepared:
        ok = p.ok
        xs.append((p.features if use_features else p.windows)[ok])
        ys.append(p.labels(route)[ok])
    return np.concatenate(xs), np.concatenate(ys)


def train_segmentor(kind: str, train: Sequence[DriveWindows], route: RouteModel,
                    forest_cfg: forest.ForestConfig = forest.ForestConfig(),
                    cnn_cfg: cnn.TrainConfig = cnn.TrainConfig(),
                    val: Optional[Sequence[DriveWindows]] = None, cnn_kwargs: Optional[dict] = None):
    n = route.num_segments
    if kind == "forest":
        x, y = training_set(train, route, use_features=True)
        model = forest.fit_forest(x, y, forest_cfg, n_classes=n, layout_hash=features.layout_hash())
        model.meta["route_segments"] = n
        return ForestSegmentor(model)
    if kind == "cnn":
        x, y = training_set(train, route, use_features=False)
        val_xy = training_set(val, route, use_features=False) if val else None
        result = cnn.train(x, y, cnn_cfg, n_classes=n, val=val_xy, **(cnn_kwargs or {}))
        model = result.best if result.best is not None else result.model
        model.meta["route_segments"] = n
        return CnnSegmentor(model)
    raise ValueError(f"unknown segmentor kind {kind!r}; expected one of {SEGMENTOR_KINDS}")


def _classify(segmentor, p: DriveWindows) -> np.ndarray:
    seg = np.ones(len(p.starts), dtype=int)
    ok = p.ok
    if ok.any():
        if isinstance(segmentor, ForestSegmentor):
            seg[ok] = segmentor.predict_features(p.features[ok])
        else:
            seg[ok] = classify(segmentor, p.windows[ok])
    return seg


def infer(segmentor, p: DriveWindows, route: RouteModel) -> Trajectory:
    seg_raw, corrected = apply_logic(_classify(segmentor, p), p.flags, route)
    xy = route.midpoints[corrected - 1] if len(corrected) else np.zeros((0, 2))
    return Trajectory(p.starts, np.asarray(xy, dtype=float), seg_raw, corrected, p.flags)


def evaluate(segmentor, prepared: Sequence[DriveWindows], route: RouteModel):
    """Pooled per-window metrics over drives, plus the per-drive trajectories."""
    trajs = [infer(segmentor, p, route) for p in prepared]
    report = pooled_metrics(trajs, prepared, route)
    return report, trajs


def pooled_metrics(trajs: Sequence[Trajectory], prepared: Sequence[DriveWindows],
                   route: RouteModel) -> MetricsReport:
    raw = np.concatenate([t.seg_raw for t in trajs])
    cor = np.concatenate([t.seg_corrected for t in trajs])
    pos = np.concatenate([t.xy for t in trajs])
    gt = np.concatenate([p.gt_mid for p in prepared])
    truth = np.concatenate([p.labels(route) for p in prepared])
    return metrics(raw, cor, pos, gt, route, truth=truth)


def run_sweep(polyline, train: Sequence[DriveWindows], val: Sequence[DriveWindows],
              candidates: Sequence[int], kind: str = "forest",
              forest_cfg: forest.ForestConfig = forest.ForestConfig(),
              cnn_cfg: cnn.TrainConfig = cnn.TrainConfig(), cnn_kwargs: Optional[dict] = None):
    """Retrain from scratch for every candidate N and score validation mean_dist."""

    def score(n: int) -> float:
        route = build_route(polyline, n)
        seg = train_segmentor(kind, train, route, forest_cfg, cnn_cfg, val, cnn_kwargs)
        report, _ = evaluate(seg, val, route)
        return report.mean_dist

    return sweep(candidates, score)
