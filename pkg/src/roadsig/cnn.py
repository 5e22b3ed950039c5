"""1-D convolutional segmentor with hand-written backpropagation.

Architecture: ``[conv -> batch norm -> ReLU] x 3 -> global mean pool -> linear``.
Convolutions use same padding and stride 1. Inputs are ``(batch, 40, 6)``
arrays (time, channel) and are standardised with per-channel statistics
stored in the model.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import RoadsigError
from .forest import ModelFileError

CNN_FORMAT = "roadsig-cnn"
CNN_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class TrainingDivergedError(RoadsigError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr0: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** (epoch // self.lr_step_epochs)


@dataclass
class CnnModel:
    n_classes: int
    channels: tuple
    kernels: tuple
    in_channels: int = 6
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    training: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)

    def train_mode(self) -> "CnnModel":
        self.training = True
        return self

    def eval_mode(self) -> "CnnModel":
        self.training = False
        return self

    def predict_batch(self, windows) -> np.ndarray:
        return forward(self, windows, training=False).argmax(axis=1) + 1


def init_model(n_classes: int, channels=(64, 128, 1024), kernels=(3, 5, 7),
               seed: int = 0, in_channels: int = 6) -> CnnModel:
    """Fan-in scaled uniform init for conv and linear weights; BN scale 1, shift 0."""
    if len(channels) != len(kernels):
        raise ValueError("channels and kernels must have equal length")
    if any(k % 2 == 0 for k in kernels):
        raise ValueError("same padding needs odd kernel sizes")
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    c_in = in_channels
    for i, (c_out, k) in enumerate(zip(channels, kernels), start=1):
        bound = 1.0 / np.sqrt(c_in * k)
        params[f"conv{i}.weight"] = rng.uniform(-bound, bound, (c_out, c_in, k))
        params[f"bn{i}.weight"] = np.ones(c_out)
        params[f"bn{i}.bias"] = np.zeros(c_out)
        buffers[f"bn{i}.running_mean"] = np.zeros(c_out)
        buffers[f"bn{i}.running_var"] = np.ones(c_out)
        c_in = c_out
    bound = 1.0 / np.sqrt(c_in)
    params["fc.weight"] = rng.uniform(-bound, bound, (n_classes, c_in))
    params["fc.bias"] = rng.uniform(-bound, bound, n_classes)
    buffers["input.mean"] = np.zeros(in_channels)
    buffers["input.std"] = np.ones(in_channels)
    return CnnModel(n_classes, tuple(channels), tuple(kernels), in_channels, params, buffers)


def _as_batch(model: CnnModel, x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.in_channels:
        raise ValueError(f"expected input of shape (batch, time, {model.in_channels}), got {x.shape}")
    return x


def _im2col(h: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    hp = np.pad(h, ((0, 0), (p, p), (0, 0)))
    cols = sliding_window_view(hp, k, axis=1)  # (B, T, C, k)
    return cols.reshape(h.shape[0], h.shape[1], -1)


def _forward(model: CnnModel, x: np.ndarray, training: bool, update_stats: bool = False):
    P, Bf = model.params, model.buffers
    h = (x - Bf["input.mean"]) / Bf["input.std"]
    cache = []
    for i in range(1, model.n_blocks + 1):
        w = P[f"conv{i}.weight"]
        cols = _im2col(h, w.shape[2])
        z = cols @ w.reshape(w.shape[0], -1).T
        if training:
            mu = z.mean(axis=(0, 1))
            var = z.var(axis=(0, 1))
            if update_stats:
                m = z.shape[0] * z.shape[1]
                unbiased = var * m / max(m - 1, 1)
                Bf[f"bn{i}.running_mean"] = (1 - BN_MOMENTUM) * Bf[f"bn{i}.running_mean"] + BN_MOMENTUM * mu
                Bf[f"bn{i}.running_var"] = (1 - BN_MOMENTUM) * Bf[f"bn{i}.running_var"] + BN_MOMENTUM * unbiased
        else:
            mu, var = Bf[f"bn{i}.running_mean"], Bf[f"bn{i}.running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        a = P[f"bn{i}.weight"] * xhat + P[f"bn{i}.bias"]
        h = np.maximum(a, 0.0)
        cache.append((cols, xhat, inv_std, a > 0))
    pooled = h.mean(axis=1)
    logits = pooled @ P["fc.weight"].T + P["fc.bias"]
    return logits, (cache, pooled, h.shape)


def forward(model: CnnModel, x, training: Optional[bool] = None) -> np.ndarray:
    """Logits of shape ``(batch, n_classes)``."""
    if training is None:
        training = model.training
    logits, _ = _forward(model, _as_batch(model, x), training)
    return logits


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss(logits, labels) -> float:
    """Mean cross-entropy; ``labels`` are 1-based segment ids."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim == 1:
        logits = logits[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.min() < 1 or labels.max() > logits.shape[1]:
        raise ValueError(f"labels must lie in [1, {logits.shape[1]}]")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels - 1].mean())


def gradients(model: CnnModel, batch, labels) -> tuple[float, dict]:
    """Mean batch loss and its exact gradient for every parameter (training mode).

    Batch-norm running statistics are updated as a side effect.
    """
    x = _as_batch(model, batch)
    labels = np.asarray(labels, dtype=int)
    logits, (cache, pooled, hshape) = _forward(model, x, training=True, update_stats=True)
    value = loss(logits, labels)
    if not np.isfinite(value):
        raise TrainingDivergedError(-1, -1, value)
    P = model.params
    B, T = x.shape[0], x.shape[1]
    grads = {}
    d_logits = softmax(logits)
    d_logits[np.arange(B), labels - 1] -= 1.0
    d_logits /= B
    grads["fc.weight"] = d_logits.T @ pooled
    grads["fc.bias"] = d_logits.sum(axis=0)
    d_h = np.broadcast_to((d_logits @ P["fc.weight"])[:, None, :] / T, hshape)
    m = B * T
    for i in range(model.n_blocks, 0, -1):
        cols, xhat, inv_std, active = cache[i - 1]
        w = P[f"conv{i}.weight"]
        c_out, c_in, k = w.shape
        d_a = d_h * active
        grads[f"bn{i}.weight"] = np.sum(d_a * xhat, axis=(0, 1))
        grads[f"bn{i}.bias"] = np.sum(d_a, axis=(0, 1))
        d_xhat = d_a * P[f"bn{i}.weight"]
        d_z = inv_std / m * (
            m * d_xhat - d_xhat.sum(axis=(0, 1)) - xhat * np.sum(d_xhat * xhat, axis=(0, 1))
        )
        d_z2 = d_z.reshape(m, c_out)
        grads[f"conv{i}.weight"] = (d_z2.T @ cols.reshape(m, -1)).reshape(w.shape)
        if i == 1:
            break
        d_cols = (d_z2 @ w.reshape(c_out, -1)).reshape(B, T, c_in, k)
        p = k // 2
        d_hp = np.zeros((B, T + 2 * p, c_in))
        for j in range(k):
            d_hp[:, j:j + T] += d_cols[..., j]
        d_h = d_hp[:, p:p + T]
    return value, {name: grads[name] for name in P}


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected ADAM update, in place on ``params`` and ``state``."""
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainResult:
    model: CnnModel
    best: Optional[CnnModel]
    log: list  # rows: (epoch, lr, train_loss, train_acc, val_acc)
    best_val_acc: float = float("nan")


def accuracy(model: CnnModel, windows, labels, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    preds = np.concatenate([
        model.predict_batch(windows[i:i + batch_size]) for i in range(0, len(labels), batch_size)
    ])
    return float(np.mean(preds == labels))


def train(windows, labels, cfg: TrainConfig = TrainConfig(), n_classes: Optional[int] = None,
          val: Optional[tuple] = None, channels=(64, 128, 1024), kernels=(3, 5, 7),
          progress=None) -> TrainResult:
    """Mini-batch ADAM training with step learning-rate decay.

    Returns the final-epoch model and, when ``val=(windows, labels)`` is given,
    the checkpoint with the best validation accuracy.
    """
    x = np.asarray(windows, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 3 or x.shape[1:] != (40, 6):
        raise ValueError(f"training windows must have shape (n, 40, 6), got {x.shape}")
    if len(x) != len(y) or len(y) == 0:
        raise ValueError("need equal, non-zero numbers of windows and labels")
    n_classes = n_classes or int(y.max())
    if y.min() < 1 or y.max() > n_classes:
        raise ValueError(f"labels must lie in [1, {n_classes}]")
    model = init_model(n_classes, channels, kernels, seed=cfg.seed)
    log: list = []
    if cfg.epochs == 0:
        return TrainResult(model, None, log)
    model.buffers["input.mean"] = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    model.buffers["input.std"] = np.where(std > 1e-8, std, 1.0)

    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    best, best_acc = None, -1.0
    model.train_mode()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(y))
        losses, correct = [], 0
        for b, start in enumerate(range(0, len(y), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                value, grads = gradients(model, x[idx], y[idx])
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(epoch, b, float("nan")) from exc
            adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            losses.append(value * len(idx))
        model.eval_mode()
        train_acc = accuracy(model, x, y)
        val_acc = accuracy(model, *val) if val is not None else float("nan")
        model.train_mode()
        log.append((epoch, lr, float(np.sum(losses) / len(y)), train_acc, val_acc))
        if val is not None and val_acc > best_acc:
            best, best_acc = model.copy().eval_mode(), val_acc
        if progress is not None:
            progress(log[-1])
    model.eval_mode()
    return TrainResult(model, best, log, best_acc if val is not None else float("nan"))


def write_train_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "lr", "train_loss", "train_acc", "val_acc"))
        for epoch, lr, tl, ta, va in log:
            w.writerow((epoch, repr(lr), repr(tl), repr(ta), repr(va)))


# --- persistence ------------------------------------------------------------

def save_cnn(model: CnnModel, path) -> None:
    meta = {
        "format": CNN_FORMAT,
        "version": CNN_VERSION,
        "n_classes": model.n_classes,
        "channels": list(model.channels),
        "kernels": list(model.kernels),
        "in_channels": model.in_channels,
        "tensors": [],
        "meta": model.meta,
    }
    arrays = {}
    for prefix, group in (("param", model.params), ("buffer", model.buffers)):
        for name, value in group.items():
            key = f"{prefix}:{name}"
            meta["tensors"].append({"name": key, "shape": list(value.shape)})
            arrays[key] = np.ascontiguousarray(value, dtype=float)
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_cnn(path) -> CnnModel:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode())
    except Exception as exc:
        raise ModelFileError(f"{path}: cannot read CNN model ({exc})") from exc
    if meta.get("format") != CNN_FORMAT:
        raise ModelFileError(f"{path}: not a CNN model (format {meta.get('format')!r})")
    if meta.get("version") != CNN_VERSION:
        raise ModelFileError(
            f"{path}: CNN model version {meta.get('version')} unsupported "
            f"(this build reads version {CNN_VERSION})"
        )
    model = CnnModel(meta["n_classes"], tuple(meta["channels"]), tuple(meta["kernels"]), meta["in_channels"],
                     meta=meta.get("meta", {}))
    for t in meta["tensors"]:
        prefix, name = t["name"].split(":", 1)
        value = arrays[t["name"]].reshape(t["shape"])
        (model.params if prefix == "param" else model.buffers)[name] = value
    return model
