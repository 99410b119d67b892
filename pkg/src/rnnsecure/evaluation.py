"""Confusion-matrix metrics and stratified k-fold cross-validation."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .data import DataError, Dataset
from .model import TopologyConfig, TrainConfig, build_model, predict, train
from .tensor import Rng, derive_seed


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[actual, predicted]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    averaging: str

    def row(self) -> list[float]:
        return [self.accuracy, self.precision, self.recall, self.f_score]


def confusion(predicted, actual, k: int) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape:
        raise ValueError(f"{predicted.size} predictions for {actual.size} labels")
    for name, arr in (("predicted", predicted), ("actual", actual)):
        bad = np.flatnonzero((arr < 0) | (arr >= k))
        if bad.size:
            raise DataError(f"{name} label {arr[bad[0]]} at position {bad[0]} outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts)


def _f(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _div(a, b) -> float:
    return float(a) / float(b) if b else 0.0


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Binary: positive-class (label 1) metrics. Multiclass: support-weighted averages."""
    c = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    accuracy = float(np.trace(c)) / total
    tp = np.diag(c).astype(np.float64)
    predicted = c.sum(axis=0)
    support = c.sum(axis=1)
    prec = [_div(tp[i], predicted[i]) for i in range(cm.k)]
    rec = [_div(tp[i], support[i]) for i in range(cm.k)]
    if cm.k == 2:
        return MetricsReport(accuracy, prec[1], rec[1], _f(prec[1], rec[1]), "positive-class")
    weights = support / total
    fs = [_f(p, r) for p, r in zip(prec, rec)]
    return MetricsReport(
        accuracy,
        float(np.dot(weights, prec)),
        float(np.dot(weights, rec)),
        float(np.dot(weights, fs)),
        "weighted",
    )


def evaluate_labels(predicted, actual, k: int) -> MetricsReport:
    return metrics(confusion(predicted, actual, k))


# ------------------------------------------------------------------ k-fold


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle each class with the seeded generator, then deal its members round-robin.

    The deal continues where the previous class stopped, so small classes do
    not all pile into the first folds.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = Rng(seed)
    assignments = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        assignments[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return FoldPlan(k, assignments)


FitPredict = Callable[[Dataset, Dataset, int], np.ndarray]


@dataclass(frozen=True)
class RnnFitPredict:
    """Train a fresh RNN on ``train_ds`` with ``seed`` and label ``test_ds``."""

    topology: TopologyConfig
    cfg: TrainConfig

    def __call__(self, train_ds: Dataset, test_ds: Dataset, seed: int) -> np.ndarray:
        model = build_model(self.topology, train_ds.x.shape[1], train_ds.schema.n_classes, seed=seed)
        train(model, train_ds, replace(self.cfg, seed=seed))
        return predict(model, test_ds.x)[0]


class FoldFailed(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause

    def __reduce__(self):
        return (FoldFailed, (self.fold, self.cause))


def _run_fold(args):
    fit_predict, ds, plan, fold, seed = args
    try:
        tr = ds.subset(plan.train_indices(fold))
        te = ds.subset(plan.test_indices(fold))
        return evaluate_labels(fit_predict(tr, te, seed), te.y, ds.schema.n_classes)
    except Exception as exc:
        raise FoldFailed(fold, exc) from exc


def cross_validate(topology: TopologyConfig | None, dataset: Dataset, cfg: TrainConfig, k: int = 10,
                   fit_predict: FitPredict | None = None, jobs: int = 1):
    """Mean fold accuracy and per-fold reports (ordered by fold index).

    Fold ``f`` trains with seed ``derive_seed(cfg.seed, f)``. ``fit_predict``
    replaces the RNN with any other learner.
    """
    if fit_predict is None:
        fit_predict = RnnFitPredict(topology, cfg)
    plan = stratified_kfold(dataset.y, k, seed=cfg.seed)
    tasks = [(fit_predict, dataset, plan, f, derive_seed(cfg.seed, f)) for f in range(k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_fold, tasks))
    else:
        reports = [_run_fold(t) for t in tasks]
    mean = float(np.mean([r.accuracy for r in reports]))
    return mean, reports
