"""Cross-entropy losses, the fused head gradient, and the SGD update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import sigmoid, softmax
from .tensor import ShapeError

EPS = 1e-12


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.momentum < 0:
            raise ValueError(f"momentum must be >= 0, got {self.momentum}")


def bce_loss(pd, ed) -> float:
    """Mean binary cross-entropy of predicted probabilities ``pd`` against 0/1 labels ``ed``."""
    pd = np.asarray(pd, dtype=np.float64).ravel()
    ed = np.asarray(ed, dtype=np.float64).ravel()
    if pd.size == 0:
        raise ValueError("bce_loss on an empty batch")
    if pd.shape != ed.shape:
        raise ShapeError(f"prediction shape {pd.shape} != label shape {ed.shape}")
    p = np.clip(pd, EPS, 1.0 - EPS)
    return float(-np.mean(ed * np.log(p) + (1.0 - ed) * np.log1p(-p)))


def cce_loss(true, pred) -> float:
    """Batch-averaged cross-entropy H(true, pred); rows are distributions over classes."""
    true = np.atleast_2d(np.asarray(true, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    if true.shape[0] == 0:
        raise ValueError("cce_loss on an empty batch")
    if true.shape != pred.shape:
        raise ShapeError(f"label shape {true.shape} != prediction shape {pred.shape}")
    return float(-np.sum(true * np.log(np.maximum(pred, EPS))) / true.shape[0])


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def head_loss_grad(logits, labels, head: str):
    """Loss and gradient with respect to the pre-head values.

    ``sigmoid`` takes ``(B,)`` or ``(B, 1)`` logits and 0/1 labels; ``softmax``
    takes ``(B, K)`` logits and either integer labels or one-hot rows. Uses the
    fused form ``(probability - label) / B`` in both cases.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if head == "sigmoid":
        if z.ndim == 2 and z.shape[1] != 1 or y.ndim == 2 and y.shape[1] != 1:
            raise ValueError(f"sigmoid head needs one column of logits and binary labels, got {z.shape}, {y.shape}")
        flat = z.reshape(-1)
        y = y.reshape(-1).astype(np.float64)
        if flat.shape != y.shape:
            raise ShapeError(f"{flat.size} logits for {y.size} labels")
        p = sigmoid(flat)
        loss = bce_loss(p, y)
        grad = ((p - y) / y.size).reshape(z.shape)
        return loss, grad
    if head == "softmax":
        if z.ndim != 2:
            raise ValueError(f"softmax head needs (B, K) logits, got {z.shape}")
        if y.ndim == 1:
            y = one_hot(y, z.shape[1])
        y = y.astype(np.float64)
        if y.shape != z.shape:
            raise ValueError(f"softmax head needs one-hot labels of shape {z.shape}, got {y.shape}")
        p = softmax(z)
        return cce_loss(y, p), (p - y) / z.shape[0]
    raise ValueError(f"unknown head {head!r}")


def sgd_step(param, grad, cfg: SgdConfig, velocity=None):
    """``v' = momentum*v + grad``, ``param' = param - lr*v'``. Returns new arrays."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if velocity is None:
        velocity = np.zeros_like(param)
    if param.shape != grad.shape or velocity.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape}, velocity {np.shape(velocity)} differ")
    v = cfg.momentum * velocity + grad if cfg.momentum else grad.copy()
    return param - cfg.learning_rate * v, v
