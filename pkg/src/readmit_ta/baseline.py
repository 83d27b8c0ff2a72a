"""Logistic-regression baseline trained with validation-AUPRC early stopping.

Protocol: mini-batch gradient steps; every ``eval_every`` steps the validation
AUPRC is computed. A new best is checkpointed, anything else multiplies the
learning rate by ``lr_decay``; ``patience`` consecutive misses end training and
the best checkpoint is returned.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatch, SingleClassValidation
from .evaluation import auprc

log = logging.getLogger(__name__)

ADAM = "adam"
SGD = "sgd"


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.97
    eval_every: int = 200
    patience: int = 7
    seed: int = 0
    class_weighting: bool = True
    optimizer: str = ADAM
    max_steps: int = 200_000

    def __post_init__(self):
        if self.batch_size < 1 or self.eval_every < 1 or self.patience < 1 or self.max_steps < 1:
            raise ValueError("batch_size, eval_every, patience and max_steps must be >= 1")
        if not self.lr > 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be > 0 and lr_decay in (0, 1]")
        if self.optimizer not in (ADAM, SGD):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    feature_spec: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias),
                "feature_spec": self.feature_spec}

    @classmethod
    def from_json(cls, d: dict) -> "LinearModel":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), d.get("feature_spec", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class LogEntry:
    step: int
    lr: float  # learning rate in effect after this evaluation
    val_auprc: float
    checkpointed: bool


def log_to_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "lr", "val_auprc", "checkpointed"])
    for e in entries:
        w.writerow([e.step, repr(e.lr), repr(e.val_auprc), int(e.checkpointed)])
    return buf.getvalue()


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray | None = None):
    """Weighted mean logistic loss and its gradient with respect to (w, b)."""
    z = X @ w + b
    sw = np.ones(len(y)) if sample_weight is None else sample_weight
    total = sw.sum()
    loss = float(np.sum(sw * (np.logaddexp(0.0, z) - y * z)) / total)
    r = sw * (sigmoid(z) - y) / total
    return loss, X.T @ r, float(r.sum())


def predict(model: LinearModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.weights):
        raise DimensionMismatch(f"features have width {X.shape[1]}, model expects {len(model.weights)}")
    return sigmoid(X @ model.weights + model.bias)


def class_weights(y: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights normalised so both classes carry half the mass."""
    n, n_pos = len(y), int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(n)
    return np.where(y, n / (2.0 * n_pos), n / (2.0 * n_neg))


def train(X_train, y_train, X_val, y_val, cfg: TrainConfig | None = None,
          feature_spec: dict | None = None) -> tuple[LinearModel, list[LogEntry]]:
    cfg = cfg or TrainConfig()
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    y_train = np.asarray(y_train).astype(float)
    y_val = np.asarray(y_val).astype(bool)
    if X_train.ndim != 2 or X_val.ndim != 2 or X_train.shape[1] != X_val.shape[1]:
        raise DimensionMismatch(f"train width {X_train.shape} vs validation width {X_val.shape}")
    if len(X_train) != len(y_train) or len(X_val) != len(y_val):
        raise DimensionMismatch("feature and label counts differ")
    if len(X_train) == 0:
        raise DataError("empty training set")
    if y_val.all() or not y_val.any():
        raise SingleClassValidation("validation set needs both classes")

    # optimise in standardised coordinates, fold the scaling back at the end
    center = X_train.mean(axis=0)
    scale = X_train.std(axis=0)
    scale[scale == 0] = 1.0
    Z_train = (X_train - center) / scale
    Z_val = (X_val - center) / scale

    sw = class_weights(y_train.astype(bool)) if cfg.class_weighting else np.ones(len(y_train))
    rng = np.random.default_rng(cfg.seed)
    d = X_train.shape[1]
    w, b = np.zeros(d), 0.0
    m_w, v_w, m_b, v_b = np.zeros(d), np.zeros(d), 0.0, 0.0
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    lr = cfg.lr
    best = -np.inf
    best_w, best_b = w.copy(), b
    misses = 0
    history: list[LogEntry] = []
    step = 0
    n = len(Z_train)
    done = False
    while not done:
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, g_w, g_b = loss_and_grad(w, b, Z_train[idx], y_train[idx], sw[idx])
            step += 1
            if cfg.optimizer == ADAM:
                m_w = beta1 * m_w + (1 - beta1) * g_w
                v_w = beta2 * v_w + (1 - beta2) * g_w ** 2
                m_b = beta1 * m_b + (1 - beta1) * g_b
                v_b = beta2 * v_b + (1 - beta2) * g_b ** 2
                c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
                w = w - lr * (m_w / c1) / (np.sqrt(v_w / c2) + eps)
                b = b - lr * (m_b / c1) / (np.sqrt(v_b / c2) + eps)
            else:
                w = w - lr * g_w
                b = b - lr * g_b

            if step % cfg.eval_every == 0 or step == cfg.max_steps:
                score = auprc(sigmoid(Z_val @ w + b), y_val)
                improved = score > best
                if improved:
                    best, best_w, best_b = score, w.copy(), b
                    misses = 0
                else:
                    misses += 1
                    lr *= cfg.lr_decay
                history.append(LogEntry(step, lr, float(score), improved))
                log.debug("step %d lr %.3g val_auprc %.4f%s", step, lr, score, " *" if improved else "")
                if misses >= cfg.patience or step >= cfg.max_steps:
                    done = True
                    break

    weights = best_w / scale
    bias = float(best_b - np.sum(best_w * center / scale))
    return LinearModel(weights, bias, dict(feature_spec or {})), history
