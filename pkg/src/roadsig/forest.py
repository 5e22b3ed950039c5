"""Bagged CART decision trees grown to purity (Gini impurity)."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import RoadsigError

FOREST_FORMAT = "roadsig-forest"
FOREST_VERSION = 1


class ModelFileError(RoadsigError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    features_per_split: Optional[int] = None  # None: floor(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass
class DecisionTree:
    """Flat node arrays. ``feature[i] == -1`` marks a leaf with class ``value[i]``.

    Samples with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        """Number of nodes on the longest root-to-leaf path (a lone leaf has depth 1)."""
        depth = np.zeros(self.n_nodes, dtype=int)
        depth[0] = 1
        # children always have larger indices than their parent
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            go_left = x[rows, np.where(active, feat, 0)] <= self.threshold[node]
            node = np.where(active, np.where(go_left, self.left[node], self.right[node]), node)


@dataclass
class ForestModel:
    trees: list
    n_classes: int
    n_features: int
    config: ForestConfig
    layout_hash: str = ""
    meta: dict = field(default_factory=dict)

    def votes(self, x) -> np.ndarray:
        """Vote counts, shape ``(n, n_classes)``; column ``k`` counts class ``k + 1``."""
        x = _as_matrix(x, self.n_features)
        counts = np.zeros((len(x), self.n_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for tree in self.trees:
            np.add.at(counts, (rows, tree.apply(x) - 1), 1)
        return counts

    def predict_batch(self, x) -> np.ndarray:
        # argmax takes the first maximum, i.e. the lowest class id on ties
        return self.votes(x).argmax(axis=1) + 1


class ForestInputError(RoadsigError, ValueError):
    pass


def _as_matrix(x, n_features: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ForestInputError(f"feature matrix must be 2-D, got shape {x.shape}")
    if n_features is not None and x.shape[1] != n_features:
        raise ForestInputError(f"expected {n_features} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ForestInputError("features must be finite")
    return x


def _best_split(xn: np.ndarray, yn: np.ndarray, feats: np.ndarray, n_cls: int):
    """Best Gini split of one node over candidate features.

    Returns ``(score, feature, threshold)`` or ``None`` when every candidate
    feature is constant. ``score`` is sum(c_L^2)/n_L + sum(c_R^2)/n_R, which
    the weighted child impurity decreases with.
    """
    v = xn[:, feats]
    order = np.argsort(v, axis=0, kind="stable")
    vs = np.take_along_axis(v, order, axis=0)
    onehot = np.eye(n_cls)[yn[order]]  # (n, m, c)
    cum = np.cumsum(onehot, axis=0)[:-1]
    total = cum[-1] + onehot[-1]
    n = len(yn)
    n_left = np.arange(1, n, dtype=float)[:, None]
    right = total[None] - cum
    score = np.sum(cum * cum, axis=2) / n_left + np.sum(right * right, axis=2) / (n - n_left)
    valid = vs[1:] > vs[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    pos = score.argmax(axis=0)
    per_feat = score[pos, np.arange(len(feats))]
    best = per_feat.max()
    # equal scores go to the lowest feature index
    cands = np.flatnonzero(per_feat == best)
    j = cands[np.argmin(feats[cands])]
    lo, hi = vs[pos[j], j], vs[pos[j] + 1, j]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return best, int(feats[j]), float(thr)


def _grow_tree(x: np.ndarray, y: np.ndarray, n_classes: int, mtry: int,
               max_depth: Optional[int], rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        return len(feature) - 1

    n_features = x.shape[1]
    root = new_node()
    stack = [(root, np.arange(len(y)), 1)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        counts = np.bincount(yn, minlength=n_classes)
        value[node] = int(counts.argmax()) + 1
        present = np.flatnonzero(counts)
        if len(present) == 1 or (max_depth is not None and depth >= max_depth):
            continue
        remap = np.zeros(n_classes, dtype=np.int64)
        remap[present] = np.arange(len(present))
        xn = x[idx]
        perm = rng.permutation(n_features)
        split = None
        # keep drawing features past mtry until some non-constant one is found
        for start in range(0, n_features, mtry):
            split = _best_split(xn, remap[yn], perm[start:start + mtry], len(present))
            if split is not None:
                break
        if split is None:
            continue
        _, f, thr = split
        mask = xn[:, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # right pushed first so the left subtree is built first
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.int32),
    )


def _fit_one(x, y0, n_classes, mtry, cfg: ForestConfig, tree_index: int) -> DecisionTree:
    rng = np.random.default_rng([cfg.seed, tree_index])
    if cfg.bootstrap:
        sample = rng.integers(0, len(y0), len(y0))
        xb, yb = x[sample], y0[sample]
    else:
        xb, yb = x, y0
    return _grow_tree(xb, yb, n_classes, mtry, cfg.max_depth, rng)


def fit_forest(x, y, cfg: ForestConfig = ForestConfig(), n_classes: Optional[int] = None,
               layout_hash: str = "") -> ForestModel:
    """Fit ``cfg.n_trees`` trees on bootstrap resamples of ``(x, y)``; labels are 1-based."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ForestInputError("training set is empty or not a 2-D feature matrix")
    x = _as_matrix(x)
    y = np.asarray(y)
    if len(y) != len(x):
        raise ForestInputError(f"{len(x)} feature rows but {len(y)} labels")
    if not np.all(y == np.round(y)):
        raise ForestInputError("labels must be integers")
    y = y.astype(np.int64)
    if n_classes is None:
        n_classes = int(y.max())
    if y.min() < 1 or y.max() > n_classes:
        raise ForestInputError(f"labels must lie in [1, {n_classes}]")
    mtry = cfg.features_per_split or max(1, math.isqrt(x.shape[1]))
    mtry = min(mtry, x.shape[1])
    y0 = y - 1
    if cfg.n_jobs == 1:
        trees = [_fit_one(x, y0, n_classes, mtry, cfg, i) for i in range(cfg.n_trees)]
    else:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_fit_one)(x, y0, n_classes, mtry, cfg, i) for i in range(cfg.n_trees)
        )
    return ForestModel(trees, n_classes, x.shape[1], cfg, layout_hash)


def predict(model: ForestModel, v) -> tuple[int, dict[int, int]]:
    """Majority vote for one feature vector, with the vote histogram."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ForestInputError("predict takes a single feature vector")
    counts = model.votes(v)[0]
    hist = {k + 1: int(c) for k, c in enumerate(counts) if c}
    return int(counts.argmax()) + 1, hist


def depth_stats(model: ForestModel) -> tuple[float, int, int]:
    depths = [t.depth for t in model.trees]
    return float(np.mean(depths)), int(min(depths)), int(max(depths))


# --- persistence ------------------------------------------------------------

def save_forest(model: ForestModel, path) -> None:
    offsets = np.cumsum([0] + [t.n_nodes for t in model.trees])
    meta = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "layout_hash": model.layout_hash,
        "config": asdict(model.config),
        "meta": model.meta,
    }
    cat = lambda name: np.concatenate([getattr(t, name) for t in model.trees])  # noqa: E731
    buf = io.BytesIO()
    np.savez(
        buf,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        offsets=offsets.astype(np.int64),
        feature=cat("feature"),
        threshold=cat("threshold"),
        left=cat("left"),
        right=cat("right"),
        value=cat("value"),
    )
    Path(path).write_bytes(buf.getvalue())


def load_forest(path) -> ForestModel:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except Exception as exc:  # corrupt or not an npz archive
        raise ModelFileError(f"{path}: cannot read forest model ({exc})") from exc
    try:
        meta = json.loads(arrays["meta"].tobytes().decode())
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"{path}: missing or corrupt metadata") from exc
    if meta.get("format") != FOREST_FORMAT:
        raise ModelFileError(f"{path}: not a forest model (format {meta.get('format')!r})")
    if meta.get("version") != FOREST_VERSION:
        raise ModelFileError(
            f"{path}: forest model version {meta.get('version')} unsupported "
            f"(this build reads version {FOREST_VERSION})"
        )
    off = arrays["offsets"]
    trees = [
        DecisionTree(*(arrays[k][off[i]:off[i + 1]] for k in ("feature", "threshold", "left", "right", "value")))
        for i in range(len(off) - 1)
    ]
    return ForestModel(
        trees,
        meta["n_classes"],
        meta["n_features"],
        ForestConfig(**meta["config"]),
        meta["layout_hash"],
        meta.get("meta", {}),
    )
