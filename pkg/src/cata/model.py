"""Linear softmax classifier used as the pretrained model in experiments.

Parameters are flattened as ``[W.ravel() (row-major, C x F), b (C)]`` so a
model of ``C`` classes over ``F`` features has ``d = C*F + C`` parameters.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, DimensionError, FormatError, NonFiniteError
from .paramvec import ParamVector

log = logging.getLogger(__name__)

MODEL_MAGIC = "CATA-MODEL v1"


@dataclass(frozen=True, eq=False)
class ToyClassifier:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError(f"weights {w.shape} and bias {b.shape} do not agree")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return param_dim(self.num_classes, self.num_features)

    def flatten(self) -> ParamVector:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def unflatten(cls, theta, num_classes: int, num_features: int) -> "ToyClassifier":
        theta = np.asarray(theta, dtype=np.float64)
        split = num_classes * num_features
        if theta.shape != (split + num_classes,):
            raise DimensionError(
                f"parameter vector has dim {theta.size}, expected {split + num_classes}"
            )
        return cls(theta[:split].reshape(num_classes, num_features).copy(), theta[split:].copy())

    @classmethod
    def zeros(cls, num_classes: int, num_features: int) -> "ToyClassifier":
        return cls(np.zeros((num_classes, num_features)), np.zeros(num_classes))

    def __eq__(self, other):
        if not isinstance(other, ToyClassifier):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)


def param_dim(num_classes: int, num_features: int) -> int:
    return num_classes * num_features + num_classes


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch gradient descent settings.

    ``grad_clip`` caps the L2 norm of each mini-batch gradient (None disables it).
    """

    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")
        if not (math.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")

    def to_dict(self) -> dict:
        return asdict(self)


# Defaults for building the pretrained model and for per-request fine-tuning.
# The regularised pretraining keeps logit margins moderate; without it a
# negated forget-set task vector cannot move any class at lambda = 0.7.
PRETRAIN_DEFAULTS = TrainConfig(learning_rate=0.05, epochs=30, batch_size=32, weight_decay=0.1)
FINETUNE_DEFAULTS = TrainConfig(learning_rate=0.5, epochs=20, batch_size=8)
BASELINE_DEFAULTS = TrainConfig(learning_rate=0.1, epochs=1, batch_size=32, grad_clip=1.0)


def _split(theta: np.ndarray, num_classes: int, num_features: int):
    split = num_classes * num_features
    if theta.shape != (split + num_classes,):
        raise DimensionError(
            f"parameter vector has dim {theta.size}, expected {split + num_classes}"
        )
    return theta[:split].reshape(num_classes, num_features), theta[split:]


def forward_logits(model: ToyClassifier, x) -> np.ndarray:
    """Logits ``W x + b`` for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.num_features:
        raise DimensionError(
            f"feature length {x.shape[-1]} does not match model ({model.num_features})"
        )
    return x @ model.weights.T + model.bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_and_grad_arrays(theta, X, y, num_classes, weight_decay):
    W, b = _split(theta, num_classes, X.shape[1])
    z = X @ W.T + b
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = y.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, y]))
    p = np.exp(z - log_norm[:, None])
    p[rows, y] -= 1.0
    p /= n
    gW = p.T @ X
    gb = p.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * float(np.sum(W * W))
        gW = gW + weight_decay * W
    return loss, np.concatenate([gW.ravel(), gb])


def loss_and_grad(theta: ParamVector, X, y, num_classes: int, weight_decay: float = 0.0) -> Tuple[float, ParamVector]:
    """Mean cross-entropy (+ ``weight_decay/2 * ||W||^2``) and its exact gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError("features must be (N, F) with one label per row")
    if y.size == 0:
        raise DataError("empty batch")
    if y.min() < 0 or y.max() >= num_classes:
        raise DataError(f"label out of range [0, {num_classes})")
    return _loss_and_grad_arrays(theta, X, y, num_classes, weight_decay)


def dataset_loss(theta: ParamVector, data: Dataset, weight_decay: float = 0.0) -> float:
    return loss_and_grad(theta, data.features, data.labels, data.num_classes, weight_decay)[0]


def train(
    theta_init: ParamVector,
    data: Dataset,
    cfg: TrainConfig,
    *,
    ascent: bool = False,
    on_epoch: Optional[Callable[[int, ParamVector], None]] = None,
) -> ParamVector:
    """Mini-batch gradient descent (or ascent) on ``data`` from ``theta_init``.

    Runs ``epochs * ceil(N / batch_size)`` steps; each epoch visits the samples
    in a permutation drawn from ``numpy.random.default_rng(cfg.seed)``. With
    ``ascent=True`` the loss is maximised instead, which is how the
    gradient-ascent unlearning baseline is realised.
    """
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    theta = np.array(theta_init, dtype=np.float64, copy=True)
    # validates the dimension up front
    _split(theta, data.num_classes, data.num_features)
    X, y = data.features, data.labels
    n = len(data)
    rng = np.random.default_rng(cfg.seed)
    direction = 1.0 if ascent else -1.0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, g = _loss_and_grad_arrays(theta, X[batch], y[batch], data.num_classes, cfg.weight_decay)
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(g))
                if norm > cfg.grad_clip:
                    g = g * (cfg.grad_clip / norm)
            theta += direction * cfg.learning_rate * g
        if not np.all(np.isfinite(theta)):
            raise NonFiniteError(f"training diverged in epoch {epoch + 1}")
        if on_epoch is not None:
            on_epoch(epoch, theta.copy())
    return theta


@dataclass(frozen=True)
class AccuracyRecord:
    """Fractions of correctly classified samples, overall and per class."""

    overall: float
    per_class: Dict[int, float]
    count: int


def predict(theta: ParamVector, X, num_classes: int) -> np.ndarray:
    # np.argmax picks the first maximum, i.e. the lowest class index on ties
    W, b = _split(np.asarray(theta, dtype=np.float64), num_classes, np.asarray(X).shape[1])
    return np.argmax(np.asarray(X, dtype=np.float64) @ W.T + b, axis=1)


def evaluate_accuracy(theta: ParamVector, subset: Dataset) -> AccuracyRecord:
    if len(subset) == 0:
        raise DataError("cannot evaluate on an empty subset")
    pred = predict(theta, subset.features, subset.num_classes)
    hit = pred == subset.labels
    per_class = {
        int(c): float(np.mean(hit[idx])) for c, idx in subset.per_class_index.items() if len(idx)
    }
    return AccuracyRecord(float(np.mean(hit)), per_class, len(subset))


# --- checkpoint format -----------------------------------------------------

def format_model(model: ToyClassifier) -> str:
    lines = [MODEL_MAGIC, f"classes={model.num_classes} features={model.num_features}"]
    lines.extend(" ".join(repr(float(w)) for w in row) for row in model.weights)
    lines.append(" ".join(repr(float(b)) for b in model.bias))
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ToyClassifier:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise FormatError("not a CATA-MODEL v1 checkpoint")
    try:
        hdr = dict(tok.split("=", 1) for tok in lines[1].split())
        C, F = int(hdr["classes"]), int(hdr["features"])
    except (IndexError, KeyError, ValueError):
        raise FormatError("malformed checkpoint header") from None
    if C < 1 or F < 1:
        raise FormatError("checkpoint declares non-positive shape")
    if len(lines) != 2 + C + 1:
        raise FormatError(f"expected {C} weight rows and one bias row, got {len(lines) - 2} rows")

    def row(i, width):
        try:
            vals = [float(t) for t in lines[i].split()]
        except ValueError:
            raise FormatError(f"line {i + 1}: non-numeric value") from None
        if len(vals) != width:
            raise FormatError(f"line {i + 1}: expected {width} values, got {len(vals)}")
        return vals

    W = np.array([row(2 + c, F) for c in range(C)])
    b = np.array(row(2 + C, C))
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise FormatError("checkpoint contains non-finite values")
    return ToyClassifier(W, b)


def save_model(model: ToyClassifier, path: os.PathLike | str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_model(model))


def load_model(path: os.PathLike | str) -> ToyClassifier:
    with open(path, "r", encoding="ascii") as fh:
        return parse_model(fh.read())
