"""Linear SVM baseline trained with Pegasos-style stochastic subgradient steps.

Each machine reports the average of its iterates, which is far steadier than
the last one.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import persist
from .data import DataError, Dataset
from .tensor import Rng, ShapeError, derive_seed


@dataclass(frozen=True)
class SvmConfig:
    lam: float = 1e-4
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class SvmParams:
    """One row of ``w`` (and entry of ``b``) per machine: a single machine for
    binary problems, one per class for one-vs-rest. ``mean``/``scale`` hold the
    standardisation fitted on the training features."""

    w: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    num_classes: int
    objective: list[list[float]] = field(default_factory=list, compare=False)

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(f"SVM expects (B, {self.w.shape[1]}) input, got {np.shape(x)}")
        return ((x - self.mean) / self.scale) @ self.w.T + self.b


def _objective(w, b, x, y, lam) -> float:
    margins = y * (x @ w + b)
    return 0.5 * lam * (w @ w + b * b) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def _pegasos(x: np.ndarray, y: np.ndarray, lam: float, epochs: int, seed: int):
    """Train one binary machine on labels in {-1, +1}; returns the averaged iterate.

    The bias is handled as a weight on a constant feature, so it shrinks with
    the rest of ``w``. The iterate is stored as ``s * v`` to make the shrink
    O(1); the running sum of iterates is ``S * v - c`` where ``S`` sums the
    scales and ``c`` corrects for changes to ``v``.
    """
    n, f = x.shape
    rng = Rng(seed)
    v = np.zeros(f)
    c = np.zeros(f)
    vb = cb = 0.0
    s = 1.0
    big_s = 0.0
    t = 0
    trace = []
    rows = list(x)
    labels = y.tolist()
    w_avg, b_avg = np.zeros(f), 0.0
    for _ in range(epochs):
        for i in rng.permutation(n).tolist():
            t += 1
            eta = 1.0 / (lam * t)
            shrink = 1.0 - eta * lam
            margin = labels[i] * s * (float(v @ rows[i]) + vb)
            if shrink == 0.0:
                # first step: the iterate is zeroed, restart the scaled representation
                v[:] = 0.0
                vb = 0.0
                s = 1.0
            else:
                s *= shrink
            if margin < 1.0:
                step = eta * labels[i] / s
                v += step * rows[i]
                vb += step
                c += (step * big_s) * rows[i]
                cb += step * big_s
            big_s += s
        w_avg = (big_s * v - c) / t
        b_avg = (big_s * vb - cb) / t
        trace.append(_objective(w_avg, b_avg, x, y, lam))
    return w_avg, b_avg, trace


def _train_machine(args):
    x, y, lam, epochs, seed = args
    return _pegasos(x, y, lam, epochs, seed)


def svm_train(ds: Dataset, cfg: SvmConfig, jobs: int = 1) -> SvmParams:
    classes = np.unique(ds.y)
    if classes.size < 2:
        raise DataError(f"SVM training needs at least 2 classes, got {classes.tolist()}")
    k = ds.schema.n_classes
    mean = ds.x.mean(axis=0)
    scale = ds.x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (ds.x - mean) / scale

    targets = [1] if k == 2 else list(range(k))
    tasks = [
        (xs, np.where(ds.y == c, 1.0, -1.0), cfg.lam, cfg.epochs, derive_seed(cfg.seed, c))
        for c in targets
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_train_machine, tasks))
    else:
        results = [_train_machine(t) for t in tasks]

    w = np.array([r[0] for r in results]).reshape(len(targets), ds.x.shape[1])
    b = np.array([r[1] for r in results], dtype=np.float64)
    return SvmParams(w=w, b=b, mean=mean, scale=scale, num_classes=k, objective=[r[2] for r in results])


def svm_predict(params: SvmParams, x) -> np.ndarray:
    """Binary: label 1 iff score >= 0. One-vs-rest: argmax, lowest index on ties."""
    scores = params.scores(x)
    if params.num_classes == 2:
        return (scores[:, 0] >= 0).astype(np.int64)
    return np.argmax(scores, axis=1).astype(np.int64)


def save_svm(params: SvmParams, path) -> None:
    arrays = [("w", params.w), ("b", params.b), ("mean", params.mean), ("scale", params.scale)]
    persist.dump(path, "svm", {"num_classes": params.num_classes}, arrays)


def load_svm(path) -> SvmParams:
    meta, a = persist.load(path, "svm")
    return SvmParams(w=a["w"], b=a["b"], mean=a["mean"], scale=a["scale"], num_classes=meta["num_classes"])
