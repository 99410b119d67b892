"""Forward and backward passes for the network's building blocks.

Conventions: batched sequences are ``(B, T, D)`` arrays, hidden states are
``(B, H)``. Every ``*_forward`` returns whatever its ``*_backward`` needs as a
cache object; caches are single use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng, ShapeError

TRAIN = "train"
INFER = "infer"


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


@dataclass
class RecurrentParams:
    w_in: np.ndarray  # (H, D)
    w_rec: np.ndarray  # (H, H)
    b: np.ndarray  # (H,)

    @property
    def hidden(self) -> int:
        return self.w_in.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]


@dataclass
class DenseParams:
    w: np.ndarray  # (O, I)
    b: np.ndarray  # (O,)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def init(cls, features: int, momentum: float = 0.9, epsilon: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=np.ones(features),
            beta=np.zeros(features),
            running_mean=np.zeros(features),
            running_var=np.ones(features),
            momentum=momentum,
            epsilon=epsilon,
        )


@dataclass
class DropoutSpec:
    rate: float = 0.001
    rng: Rng = field(default_factory=lambda: Rng(0))

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


# ---------------------------------------------------------------- activations


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return softmax(z[None, :])[0]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ recurrent


def rnn_cell_forward(x_t, h_prev, p: RecurrentParams) -> np.ndarray:
    """One Elman step, ``tanh(w_in x + w_rec h + b)``, for a vector or a batch of rows."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden:
        raise ShapeError(
            f"cell expects input dim {p.input_dim} and hidden dim {p.hidden}, "
            f"got {x_t.shape} and {h_prev.shape}"
        )
    return np.tanh(x_t @ p.w_in.T + h_prev @ p.w_rec.T + p.b)


@dataclass
class RnnCache:
    x: np.ndarray  # (T, B, D)
    h0: np.ndarray  # (B, H)
    h: np.ndarray  # (T, B, H)
    params: RecurrentParams
    squeeze: bool
    time_major: bool


def rnn_layer_forward(seq, p: RecurrentParams, h0=None, time_major: bool = False):
    """Run the cell over a whole sequence.

    ``seq`` is ``(B, T, D)`` (``(T, B, D)`` with ``time_major``), or ``(T, D)``
    for a single unbatched sequence. Returns the full hidden sequence in the
    same layout as the input, and a cache.
    """
    x = np.asarray(seq, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None]
    elif x.ndim != 3:
        raise ShapeError(f"sequence must be 3-D or (T, D), got {x.shape}")
    elif not time_major:
        x = x.transpose(1, 0, 2)
    T, B, D = x.shape
    if T < 1:
        raise ValueError("sequence must have at least one step")
    if D != p.input_dim:
        raise ShapeError(f"sequence step dim {D} does not match w_in {p.w_in.shape}")
    H = p.hidden
    h0 = np.zeros((B, H)) if h0 is None else np.asarray(h0, dtype=np.float64).reshape(B, H)

    # input projections for all steps at once; only the recurrence is sequential
    h = x @ p.w_in.T
    h += p.b
    prev = h0
    w_rec_t = p.w_rec.T
    for t in range(T):
        h[t] += prev @ w_rec_t
        np.tanh(h[t], out=h[t])
        prev = h[t]
    cache = RnnCache(x=x, h0=h0, h=h, params=p, squeeze=squeeze, time_major=time_major)
    if squeeze:
        return h[:, 0], cache
    return (h if time_major else h.transpose(1, 0, 2)), cache


def rnn_layer_backward(cache: RnnCache, grad_out):
    """Backpropagation through time.

    ``grad_out`` holds dL/dh_t for every step (zeros where a step feeds
    nothing downstream), laid out like the forward output. Returns
    ``(grads, grad_x, grad_h0)`` where ``grads`` is a :class:`RecurrentParams`
    of gradients.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[:, None]
    elif not cache.time_major:
        g = g.transpose(1, 0, 2)
    if g.shape != cache.h.shape:
        raise ShapeError(f"grad_out shape {g.shape} does not match hidden sequence {cache.h.shape}")
    p = cache.params
    x, h = cache.x, cache.h
    T, B, H = h.shape

    d_pre = 1.0 - h * h
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        carry += g[t]
        d_pre[t] *= carry
        carry = d_pre[t] @ p.w_rec

    flat_d = d_pre.reshape(T * B, H)
    w_rec_grad = flat_d[B:].T @ h[:-1].reshape((T - 1) * B, H) + d_pre[0].T @ cache.h0
    grads = RecurrentParams(
        w_in=flat_d.T @ x.reshape(T * B, -1),
        w_rec=w_rec_grad,
        b=flat_d.sum(axis=0),
    )
    grad_x = d_pre @ p.w_in
    if cache.squeeze:
        return grads, grad_x[:, 0], carry[0]
    if not cache.time_major:
        grad_x = grad_x.transpose(1, 0, 2)
    return grads, grad_x, carry


# ---------------------------------------------------------------------- dense


@dataclass
class DenseCache:
    x: np.ndarray
    params: DenseParams


def dense_forward(x, p: DenseParams):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.w.shape[1]:
        raise ShapeError(f"dense layer expects (B, {p.w.shape[1]}), got {x.shape}")
    return x @ p.w.T + p.b, DenseCache(x=x, params=p)


def dense_backward(cache: DenseCache, grad):
    grad = np.asarray(grad, dtype=np.float64)
    grads = DenseParams(w=grad.T @ cache.x, b=grad.sum(axis=0))
    return grads, grad @ cache.params.w


# ----------------------------------------------------------------- batchnorm


@dataclass
class BatchNormCache:
    mode: str
    x_hat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    gamma: np.ndarray | None = None


def batchnorm_forward(x, p: BatchNormParams, mode: str, update_running: bool = True):
    """Batch normalisation over the rows of ``x``.

    Train mode uses the biased (divide-by-B) batch variance and, unless
    ``update_running`` is off, folds the batch statistics into the running
    estimates in place.
    """
    _check_mode(mode)
    x = np.asarray(x, dtype=np.float64)
    if mode == INFER:
        inv_std = 1.0 / np.sqrt(p.running_var + p.epsilon)
        return (x - p.running_mean) * inv_std * p.gamma + p.beta, BatchNormCache(mode=INFER)

    if x.shape[0] < 2:
        raise ValueError(f"train-mode batch norm needs at least 2 rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    x_hat = (x - mean) * inv_std
    if update_running:
        p.running_mean[:] = p.momentum * p.running_mean + (1.0 - p.momentum) * mean
        p.running_var[:] = p.momentum * p.running_var + (1.0 - p.momentum) * var
    out = x_hat * p.gamma + p.beta
    return out, BatchNormCache(mode=TRAIN, x_hat=x_hat, inv_std=inv_std, gamma=p.gamma.copy())


def batchnorm_backward(cache: BatchNormCache, grad):
    if cache.mode != TRAIN:
        raise RuntimeError("batchnorm_backward needs a cache from a train-mode forward pass")
    grad = np.asarray(grad, dtype=np.float64)
    B = grad.shape[0]
    grad_beta = grad.sum(axis=0)
    grad_gamma = (grad * cache.x_hat).sum(axis=0)
    g_hat = grad * cache.gamma
    grad_x = (cache.inv_std / B) * (
        B * g_hat - g_hat.sum(axis=0) - cache.x_hat * (g_hat * cache.x_hat).sum(axis=0)
    )
    return grad_x, grad_gamma, grad_beta


# ------------------------------------------------------------------- dropout


def dropout_forward(x, spec: DropoutSpec, mode: str):
    """Inverted dropout. Returns ``(out, mask)``; the mask is ``None`` when inactive."""
    _check_mode(mode)
    x = np.asarray(x, dtype=np.float64)
    if mode == INFER or spec.rate == 0.0:
        return x, None
    keep = spec.rng.random(x.size).reshape(x.shape) >= spec.rate
    mask = keep.astype(np.float64)
    return x * mask / (1.0 - spec.rate), mask


def dropout_backward(mask, grad, rate: float):
    if mask is None:
        return grad
    return grad * mask / (1.0 - rate)
