import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob
from rnnsecure.data import DataError, Dataset, DatasetSchema
from rnnsecure.evaluation import (
    ConfusionMatrix,
    FoldFailed,
    confusion,
    cross_validate,
    metrics,
    stratified_kfold,
)
from rnnsecure.model import TopologyConfig, TrainConfig


def predict_majority(train_ds, test_ds, seed):
    return np.full(len(test_ds), np.bincount(train_ds.y).argmax())


def predict_failing(train_ds, test_ds, seed):
    raise RuntimeError("boom")


def predict_noisy(train_ds, test_ds, seed):
    from rnnsecure.tensor import Rng
    return Rng(seed).integers(len(test_ds), 2)


def check_stratified(labels, plan):
    k = plan.k
    assert plan.assignments.shape == labels.shape
    assert set(np.unique(plan.assignments)) <= set(range(k))
    covered = np.concatenate([plan.test_indices(f) for f in range(k)])
    assert sorted(covered.tolist()) == list(range(labels.size))
    for c in np.unique(labels):
        n_c = int(np.sum(labels == c))
        for f in range(k):
            got = int(np.sum(labels[plan.test_indices(f)] == c))
            assert abs(got - n_c / k) < 1


class TestConfusion:
    def test_hand_tally(self):
        cm = confusion([1, 0, 1], [1, 1, 0], 2)
        assert cm.counts.tolist() == [[0, 1], [1, 1]]

    def test_perfect_is_diagonal(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]

    def test_empty(self):
        cm = confusion([], [], 3)
        assert cm.total == 0 and cm.counts.shape == (3, 3)

    def test_out_of_range(self):
        with pytest.raises(DataError):
            confusion([0, 3], [0, 1], 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0], [0, 1], 2)


class TestMetrics:
    def test_binary_example(self):
        # rows are actual, columns predicted: TN=6, FP=2, FN=4, TP=8
        r = metrics(ConfusionMatrix(np.array([[6, 2], [4, 8]])))
        assert r.precision == pytest.approx(0.8, abs=1e-12)
        assert r.recall == pytest.approx(2 / 3, abs=1e-12)
        assert r.f_score == pytest.approx(2 * 0.8 * (2 / 3) / (0.8 + 2 / 3), abs=1e-12)
        assert r.f_score == pytest.approx(0.7273, abs=1e-4)
        assert r.accuracy == pytest.approx(0.7, abs=1e-12)
        assert r.averaging == "positive-class"

    def test_diagonal(self):
        r = metrics(ConfusionMatrix(np.diag([3, 4, 5])))
        assert (r.accuracy, r.precision, r.recall, r.f_score) == (1.0, 1.0, 1.0, 1.0)
        assert r.averaging == "weighted"

    def test_all_wrong_binary(self):
        r = metrics(ConfusionMatrix(np.array([[0, 5], [7, 0]])))
        assert (r.accuracy, r.precision, r.recall, r.f_score) == (0.0, 0.0, 0.0, 0.0)

    def test_weighted_hand_example(self):
        cm = np.array([[5, 1, 0], [2, 3, 1], [0, 0, 4]])
        prec = [5 / 7, 3 / 4, 4 / 5]
        rec = [5 / 6, 3 / 6, 4 / 4]
        support = [6, 6, 4]
        f = [2 * p * r / (p + r) for p, r in zip(prec, rec)]
        r = metrics(ConfusionMatrix(cm))
        assert r.precision == pytest.approx(np.dot(prec, support) / 16, abs=1e-12)
        assert r.recall == pytest.approx(np.dot(rec, support) / 16, abs=1e-12)
        assert r.f_score == pytest.approx(np.dot(f, support) / 16, abs=1e-12)
        assert r.accuracy == pytest.approx(12 / 16, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics(ConfusionMatrix(np.zeros((2, 2), dtype=int)))

    @given(st.integers(2, 5).flatmap(lambda k: st.lists(st.integers(0, 20), min_size=k * k, max_size=k * k)))
    def test_bounds_and_accuracy(self, flat):
        k = int(round(len(flat) ** 0.5))
        counts = np.array(flat).reshape(k, k)
        if counts.sum() == 0:
            return
        r = metrics(ConfusionMatrix(counts))
        for v in (r.accuracy, r.precision, r.recall, r.f_score):
            assert 0.0 <= v <= 1.0
        assert r.accuracy == pytest.approx(np.trace(counts) / counts.sum(), abs=1e-15)


class TestKFold:
    def test_exact_divisibility(self):
        labels = np.repeat([0, 1], 50)
        plan = stratified_kfold(labels, 10, seed=3)
        for f in range(10):
            assert np.bincount(labels[plan.test_indices(f)], minlength=2).tolist() == [5, 5]

    def test_103_samples(self):
        labels = np.array([0] * 70 + [1] * 33)
        plan = stratified_kfold(labels, 10, seed=1)
        check_stratified(labels, plan)
        ones = [int(np.sum(labels[plan.test_indices(f)] == 1)) for f in range(10)]
        assert sorted(set(ones)) == [3, 4] and sum(ones) == 33

    def test_determinism(self):
        labels = np.arange(50) % 3
        assert stratified_kfold(labels, 5, 9).assignments.tolist() == stratified_kfold(labels, 5, 9).assignments.tolist()

    def test_small_class(self):
        labels = np.array([0] * 20 + [1] * 3)
        check_stratified(labels, stratified_kfold(labels, 10, 0))

    def test_k_below_two(self):
        with pytest.raises(ValueError):
            stratified_kfold([0, 1], 1)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=300), st.integers(2, 12), st.integers(0, 2**32))
    @settings(max_examples=100)
    def test_invariants(self, labels, k, seed):
        labels = np.array(labels)
        check_stratified(labels, stratified_kfold(labels, k, seed))


def imbalanced(n=200):
    y = np.array([0] * (n * 9 // 10) + [1] * (n // 10))
    x = np.arange(n, dtype=float)[:, None]
    return Dataset(x, y, DatasetSchema("custom", 1, 2))


class TestCrossValidate:
    def test_majority_predictor(self):
        mean, reports = cross_validate(None, imbalanced(), TrainConfig(), k=10, fit_predict=predict_majority)
        assert len(reports) == 10
        assert mean == pytest.approx(0.9, abs=1e-12)

    def test_mean_within_fold_range(self):
        mean, reports = cross_validate(None, imbalanced(), TrainConfig(seed=4), k=5, fit_predict=predict_noisy)
        accs = [r.accuracy for r in reports]
        assert min(accs) <= mean <= max(accs)

    def test_k2_toy_with_rnn(self):
        ds = Dataset(np.array([[0.0, 0.1], [0.1, 0.0], [1.0, 0.9], [0.9, 1.0]]), np.array([0, 0, 1, 1]),
                     DatasetSchema("custom", 2, 2))
        topo = TopologyConfig(num_recurrent_layers=1, hidden_units=4, use_batchnorm=False)
        mean, reports = cross_validate(topo, ds, TrainConfig(epochs=2, batch_size=2), k=2)
        assert len(reports) == 2 and 0.0 <= mean <= 1.0

    def test_deterministic_and_parallel_agree(self):
        topo = TopologyConfig(num_recurrent_layers=1, hidden_units=8)
        cfg = TrainConfig(epochs=3, batch_size=32, seed=2)
        a = cross_validate(topo, blob(n=100), cfg, k=3)
        b = cross_validate(topo, blob(n=100), cfg, k=3)
        c = cross_validate(topo, blob(n=100), cfg, k=3, jobs=2)
        assert a == b == c

    def test_failure_names_fold(self):
        with pytest.raises(FoldFailed, match="fold 0"):
            cross_validate(None, imbalanced(), TrainConfig(), k=3, fit_predict=predict_failing)

    def test_failure_survives_process_pool(self):
        with pytest.raises(FoldFailed):
            cross_validate(None, imbalanced(), TrainConfig(), k=3, fit_predict=predict_failing, jobs=2)
