"""Stacked Elman RNN classifier: construction, BPTT training, gradient checking.

Architecture: input standardisation -> ``L`` recurrent layers (each consumes
the full hidden sequence of the one below) -> top hidden state at the last
step -> batch norm -> dropout -> dense -> sigmoid or softmax head. The input
mean and scale are fitted on the training set when training starts.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import persist
from .data import PER_FEATURE, SINGLE_STEP, ConfigError, Dataset, encode_sequence
from .layers import (
    INFER,
    TRAIN,
    BatchNormParams,
    DenseParams,
    DropoutSpec,
    RecurrentParams,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    rnn_layer_backward,
    rnn_layer_forward,
    sigmoid,
    softmax,
)
from .objective import head_loss_grad
from .tensor import Rng, ShapeError, derive_seed

log = logging.getLogger(__name__)

MAX_DEPTH = 6
MAX_EPOCHS = 1000

# depth per task: 6 layers for the malware task, 3 for the others
TASK_DEPTH = {"task1": 6, "task2": 3, "task3": 3}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss

    def __reduce__(self):
        return (TrainingDiverged, (self.epoch, self.batch, self.loss))


@dataclass(frozen=True)
class TopologyConfig:
    num_recurrent_layers: int = 1
    hidden_units: int = 768
    dropout_rate: float = 0.001
    use_batchnorm: bool = True
    sequence_mode: str = PER_FEATURE
    head: str = "auto"
    standardize_inputs: bool = True

    def validate(self) -> None:
        if not 1 <= self.num_recurrent_layers <= MAX_DEPTH:
            raise ConfigError(f"num_recurrent_layers must be in 1..{MAX_DEPTH}, got {self.num_recurrent_layers}")
        if self.hidden_units < 1:
            raise ConfigError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.sequence_mode not in (PER_FEATURE, SINGLE_STEP):
            raise ConfigError(f"unknown sequence_mode {self.sequence_mode!r}")
        if self.head not in ("auto", "sigmoid", "softmax"):
            raise ConfigError(f"unknown head {self.head!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 700
    batch_size: int = 128
    seed: int = 0
    shuffle: bool = True
    momentum: float = 0.0

    def validate(self, topology: TopologyConfig | None = None) -> None:
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ConfigError(f"epochs must be in 0..{MAX_EPOCHS}, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or (self.batch_size < 2 and (topology is None or topology.use_batchnorm)):
            raise ConfigError(f"batch_size must be >= 2 with batch norm, got {self.batch_size}")


@dataclass
class EpochRecord:
    loss: float
    accuracy: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]


class Model:
    def __init__(self, topology: TopologyConfig, input_dim: int, num_classes: int,
                 rnn: list[RecurrentParams], bn: BatchNormParams | None, dense: DenseParams, head: str):
        self.topology = topology
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.rnn = rnn
        self.bn = bn
        self.dense = dense
        self.head = head
        self.dropout = DropoutSpec(rate=topology.dropout_rate, rng=Rng(0))
        self.velocity: dict[str, np.ndarray] = {}
        self.input_mean = np.zeros(input_dim)
        self.input_scale = np.ones(input_dim)
        self.input_fitted = False

    @property
    def step_dim(self) -> int:
        return 1 if self.topology.sequence_mode == PER_FEATURE else self.input_dim

    @property
    def seq_len(self) -> int:
        return self.input_dim if self.topology.sequence_mode == PER_FEATURE else 1

    @property
    def output_width(self) -> int:
        return self.dense.w.shape[0]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in declaration order."""
        out = []
        for i, p in enumerate(self.rnn):
            out += [(f"rnn{i}.w_in", p.w_in), (f"rnn{i}.w_rec", p.w_rec), (f"rnn{i}.b", p.b)]
        if self.bn is not None:
            out += [("bn.gamma", self.bn.gamma), ("bn.beta", self.bn.beta)]
        out += [("dense.w", self.dense.w), ("dense.b", self.dense.b)]
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = [("input.mean", self.input_mean), ("input.scale", self.input_scale)]
        if self.bn is not None:
            out += [("bn.running_mean", self.bn.running_mean), ("bn.running_var", self.bn.running_var)]
        return out

    def fit_inputs(self, x: np.ndarray) -> None:
        """Set the input standardisation from training features (constant columns keep scale 1)."""
        if self.topology.standardize_inputs:
            self.input_mean[:] = x.mean(axis=0)
            std = x.std(axis=0)
            self.input_scale[:] = np.where(std > 0, std, 1.0)
        self.input_fitted = True

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.parameters())


def resolve_head(head: str, num_classes: int) -> str:
    if head == "auto":
        return "sigmoid" if num_classes == 2 else "softmax"
    if head == "sigmoid" and num_classes != 2:
        raise ConfigError(f"sigmoid head needs 2 classes, got {num_classes}")
    return head


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(fan_out * fan_in, -limit, limit).reshape(fan_out, fan_in)


def build_model(topology: TopologyConfig, input_dim: int, num_classes: int, seed: int = 0) -> Model:
    topology.validate()
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    head = resolve_head(topology.head, num_classes)
    rng = Rng(seed)
    H = topology.hidden_units
    d = 1 if topology.sequence_mode == PER_FEATURE else input_dim
    rnn = []
    for _ in range(topology.num_recurrent_layers):
        rnn.append(RecurrentParams(w_in=_glorot(rng, H, d), w_rec=_glorot(rng, H, H), b=np.zeros(H)))
        d = H
    out = 1 if head == "sigmoid" else num_classes
    dense = DenseParams(w=_glorot(rng, out, H), b=np.zeros(out))
    bn = BatchNormParams.init(H) if topology.use_batchnorm else None
    return Model(topology, input_dim, num_classes, rnn, bn, dense, head)


def param_count(topology: TopologyConfig, input_dim: int, num_classes: int) -> int:
    H, L = topology.hidden_units, topology.num_recurrent_layers
    d = 1 if topology.sequence_mode == PER_FEATURE else input_dim
    out = 1 if resolve_head(topology.head, num_classes) == "sigmoid" else num_classes
    n = H * d + H * H + H + (L - 1) * (2 * H * H + H) + out * H + out
    return n + (2 * H if topology.use_batchnorm else 0)


# --------------------------------------------------------------- forward/back


@dataclass
class ForwardCache:
    rnn: list
    seq_shape: tuple
    bn: object
    mask: np.ndarray | None
    dense: object
    logits: np.ndarray


def forward(model: Model, batch, mode: str = INFER, *, use_dropout: bool = True, update_running: bool = True):
    """Probabilities for a ``(B, F)`` batch.

    Sigmoid models return ``(B,)`` probabilities of class 1; softmax models
    return ``(B, K)`` rows.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"model expects (B, {model.input_dim}) input, got {x.shape}")
    x = (x - model.input_mean) / model.input_scale
    h = np.ascontiguousarray(encode_sequence(x, model.topology.sequence_mode).transpose(1, 0, 2))
    seq_shape = h.shape
    rnn_caches = []
    for p in model.rnn:
        h, c = rnn_layer_forward(h, p, time_major=True)
        rnn_caches.append(c)
    z = h[-1]
    bn_cache = None
    if model.bn is not None:
        z, bn_cache = batchnorm_forward(z, model.bn, mode, update_running=update_running)
    mask = None
    if use_dropout:
        z, mask = dropout_forward(z, model.dropout, mode)
    logits, dense_cache = dense_forward(z, model.dense)
    probs = sigmoid(logits[:, 0]) if model.head == "sigmoid" else softmax(logits)
    return probs, ForwardCache(rnn_caches, seq_shape, bn_cache, mask, dense_cache, logits)


def backward(model: Model, cache: ForwardCache, grad_logits) -> dict[str, np.ndarray]:
    grads = {}
    gd, g = dense_backward(cache.dense, grad_logits)
    g = dropout_backward(cache.mask, g, model.dropout.rate)
    if model.bn is not None:
        g, grads["bn.gamma"], grads["bn.beta"] = batchnorm_backward(cache.bn, g)
    T, B = cache.seq_shape[:2]
    g_seq = np.zeros((T, B, model.topology.hidden_units))
    g_seq[-1] = g
    for i in range(len(model.rnn) - 1, -1, -1):
        gp, g_seq, _ = rnn_layer_backward(cache.rnn[i], g_seq)
        grads[f"rnn{i}.w_in"], grads[f"rnn{i}.w_rec"], grads[f"rnn{i}.b"] = gp.w_in, gp.w_rec, gp.b
    grads["dense.w"], grads["dense.b"] = gd.w, gd.b
    return grads


def loss_and_grads(model: Model, x, y, mode: str = TRAIN, **forward_kw):
    probs, cache = forward(model, x, mode, **forward_kw)
    loss, g_logits = head_loss_grad(cache.logits, y, model.head)
    return loss, backward(model, cache, g_logits), probs


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    if probs.ndim == 1:
        return (probs >= 0.5).astype(np.int64)
    return np.argmax(probs, axis=1).astype(np.int64)


def predict(model: Model, features):
    """Infer-mode labels and probabilities. Binary threshold is inclusive at 0.5."""
    probs, _ = forward(model, features, INFER)
    return labels_from_probs(probs), probs


# -------------------------------------------------------------------- training


def _apply_sgd(model: Model, grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    for name, param in model.parameters():
        g = grads[name]
        if momentum:
            v = model.velocity.get(name)
            if v is None:
                v = model.velocity[name] = np.zeros_like(param)
            v *= momentum
            v += g
            g = v
        param -= lr * g


def train(model: Model, train_set: Dataset, cfg: TrainConfig) -> TrainHistory:
    cfg.validate(model.topology)
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    if train_set.x.shape[1] != model.input_dim:
        raise ShapeError(f"dataset has {train_set.x.shape[1]} features, model expects {model.input_dim}")
    if train_set.y.max() >= model.num_classes:
        raise ValueError(f"labels must lie in [0, {model.num_classes})")

    if cfg.epochs > 0 and not model.input_fitted:
        model.fit_inputs(train_set.x)
    order_rng = Rng(derive_seed(cfg.seed, 0))
    model.dropout.rng = Rng(derive_seed(cfg.seed, 1))
    history = TrainHistory()
    x_all, y_all = train_set.x, train_set.y
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total_loss = 0.0
        correct = 0
        seen = 0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < 2:
                continue
            x, y = x_all[idx], y_all[idx]
            loss, grads, probs = loss_and_grads(model, x, y, TRAIN)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, b, loss)
            _apply_sgd(model, grads, cfg.learning_rate, cfg.momentum)
            total_loss += loss * idx.size
            correct += int(np.sum(labels_from_probs(probs) == y))
            seen += idx.size
        rec = EpochRecord(total_loss / seen, correct / seen, time.perf_counter() - start)
        history.epochs.append(rec)
        log.debug("epoch %d loss %.6f acc %.4f (%.2fs)", epoch, rec.loss, rec.accuracy, rec.seconds)
    return history


# ------------------------------------------------------------ gradient check


def gradient_check(model: Model, batch, labels, h: float = 1e-5, max_params: int = 2000,
                   sample: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is off and batch norm runs in train mode without touching its
    running statistics, so the loss is a deterministic function of the
    parameters. Relative error uses ``max(|a|, |n|, 1e-8)`` as denominator.
    Models above ``max_params`` scalars are checked on ``sample`` random
    coordinates.
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels)
    kw = dict(use_dropout=False, update_running=False)

    def loss_at():
        _, cache = forward(model, x, TRAIN, **kw)
        return head_loss_grad(cache.logits, y, model.head)[0]

    _, grads, _ = loss_and_grads(model, x, y, TRAIN, **kw)
    coords = [(name, i) for name, p in model.parameters() for i in range(p.size)]
    if len(coords) > max_params:
        pick = Rng(seed).permutation(len(coords))[:sample]
        coords = [coords[i] for i in sorted(pick)]
    params = dict(model.parameters())
    worst = 0.0
    for name, i in coords:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = loss_at()
        flat[i] = orig - h
        down = loss_at()
        flat[i] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[name].reshape(-1)[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# ----------------------------------------------------------------- persistence


def save_model(model: Model, path) -> None:
    meta = {
        "topology": asdict(model.topology),
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "head": model.head,
        "input_fitted": model.input_fitted,
        "bn": None if model.bn is None else {"momentum": model.bn.momentum, "epsilon": model.bn.epsilon},
    }
    persist.dump(path, "rnn", meta, model.parameters() + model.buffers())


def load_model(path) -> Model:
    meta, arrays = persist.load(path, "rnn")
    topology = TopologyConfig(**meta["topology"])
    model = build_model(topology, meta["input_dim"], meta["num_classes"])
    if model.head != meta["head"]:
        raise ValueError(f"{path}: head {meta['head']!r} inconsistent with topology")
    if model.bn is not None:
        model.bn.momentum = meta["bn"]["momentum"]
        model.bn.epsilon = meta["bn"]["epsilon"]
    for name, param in model.parameters() + model.buffers():
        param[...] = arrays[name]
    model.input_fitted = meta["input_fitted"]
    return model
