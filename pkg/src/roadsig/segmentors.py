"""Adapters exposing trained models as road segmentors.

A segmentor maps processed 40x6 windows to 1-based segment ids. Every
adapter here offers ``predict_batch(windows)`` for ``(n, 40, 6)`` arrays and
is callable on a single ``ProcessedWindow``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import cnn, features, forest
from .core import ProcessedWindow


class _Base:
    n_classes: int
    kind: str

    def __call__(self, w: ProcessedWindow) -> int:
        data = w.data if isinstance(w, ProcessedWindow) else np.asarray(w)
        return int(self.predict_batch(data[None])[0])


class ForestSegmentor(_Base):
    kind = "forest"

    def __init__(self, model: forest.ForestModel):
        if model.layout_hash and model.layout_hash != features.layout_hash():
            raise forest.ModelFileError("forest was trained on a different feature layout")
        self.model = model
        self.n_classes = model.n_classes

    def predict_batch(self, windows) -> np.ndarray:
        return self.model.predict_batch(features.extract_batch(windows))

    def predict_features(self, feats) -> np.ndarray:
        return self.model.predict_batch(feats)

    def save(self, path) -> None:
        forest.save_forest(self.model, path)


class CnnSegmentor(_Base):
    kind = "cnn"

    def __init__(self, model: cnn.CnnModel):
        self.model = model.eval_mode()
        self.n_classes = model.n_classes

    def predict_batch(self, windows, batch_size: int = 256) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        return np.concatenate([
            self.model.predict_batch(windows[i:i + batch_size])
            for i in range(0, len(windows), batch_size)
        ]) if len(windows) else np.zeros(0, dtype=int)

    def save(self, path) -> None:
        cnn.save_cnn(self.model, path)


class SequenceSegmentor:
    """Replays a fixed label sequence, one label per call, ignoring the window content."""

    def __init__(self, labels):
        self.labels = [int(v) for v in labels]
        self._i = 0

    def __call__(self, w) -> int:
        value = self.labels[self._i]
        self._i += 1
        return value

    def predict_batch(self, windows) -> np.ndarray:
        out = np.array([self(w) for w in windows], dtype=int)
        return out


def load_segmentor(path):
    """Load either model kind, dispatching on the file's format tag."""
    path = Path(path)
    if not path.exists():
        raise forest.ModelFileError(f"{path}: model file not found")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(z["meta"].tobytes().decode())
    except Exception as exc:
        raise forest.ModelFileError(f"{path}: cannot read model file ({exc})") from exc
    fmt = meta.get("format")
    if fmt == forest.FOREST_FORMAT:
        return ForestSegmentor(forest.load_forest(path))
    if fmt == cnn.CNN_FORMAT:
        return CnnSegmentor(cnn.load_cnn(path))
    raise forest.ModelFileError(f"{path}: unknown model format {fmt!r}")
