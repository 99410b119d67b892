import numpy as np
import pytest

from conftest import blob
from rnnsecure.data import SINGLE_STEP, ConfigError, Dataset, DatasetSchema
from rnnsecure.layers import RecurrentParams
from rnnsecure.model import (
    TopologyConfig,
    TrainConfig,
    TrainingDiverged,
    build_model,
    forward,
    gradient_check,
    labels_from_probs,
    load_model,
    param_count,
    predict,
    save_model,
    train,
)
from rnnsecure.tensor import Rng


def small(depth=1, units=8, **kw):
    return TopologyConfig(num_recurrent_layers=depth, hidden_units=units, **kw)


def snapshot(model):
    return {name: p.copy() for name, p in model.parameters()}


class TestBuild:
    def test_task2_profile(self):
        m = build_model(small(3, 16), 9, 2)
        assert m.step_dim == 1 and m.seq_len == 9
        assert m.head == "sigmoid" and m.output_width == 1
        assert len(m.rnn) == 3

    def test_task3_profile(self):
        m = build_model(small(3, 16), 12, 3)
        assert m.head == "softmax" and m.output_width == 3

    def test_single_step_mode_uses_whole_vector(self):
        m = build_model(small(sequence_mode=SINGLE_STEP), 9, 2)
        assert m.rnn[0].w_in.shape == (8, 9) and m.seq_len == 1

    def test_determinism(self):
        a, b = build_model(small(2), 5, 3, seed=11), build_model(small(2), 5, 3, seed=11)
        for (_, x), (_, y) in zip(a.parameters(), b.parameters()):
            assert x.tobytes() == y.tobytes()

    def test_glorot_bounds_and_zero_bias(self):
        m = build_model(small(2, 32), 4, 2, seed=3)
        for p in m.rnn:
            for w in (p.w_in, p.w_rec):
                fan_out, fan_in = w.shape
                assert np.abs(w).max() <= np.sqrt(6 / (fan_in + fan_out))
            assert not np.any(p.b)
        assert not np.any(m.dense.b)

    def test_param_count_matches_arrays(self):
        for topo, f, k in [(small(1), 9, 2), (small(3, 16), 12, 3), (small(2, use_batchnorm=False), 4, 2),
                           (small(2, sequence_mode=SINGLE_STEP), 7, 4)]:
            assert param_count(topo, f, k) == build_model(topo, f, k).num_parameters()

    @pytest.mark.parametrize("topo,f,k", [(small(0), 3, 2), (small(7), 3, 2), (small(1, 0), 3, 2),
                                          (small(1), 0, 2), (small(1), 3, 1), (small(head="sigmoid"), 3, 3)])
    def test_config_errors(self, topo, f, k):
        with pytest.raises(ConfigError):
            build_model(topo, f, k)


class TestForward:
    def test_golden_trace(self):
        m = build_model(small(1, 2, use_batchnorm=False, dropout_rate=0.0), 2, 2)
        m.rnn[0] = RecurrentParams(np.array([[0.5], [-0.4]]), np.array([[0.1, 0.2], [-0.3, 0.4]]),
                                   np.array([0.05, -0.05]))
        m.dense.w[:] = [[0.7, -0.6]]
        m.dense.b[:] = [0.1]
        # unrolled by hand in scalar floating point: h2 = (-0.23013..., -0.16732...)
        probs, cache = forward(m, np.array([[1.0, -0.5]]))
        assert cache.logits[0, 0] == pytest.approx(0.03930466298468012, abs=1e-15)
        assert probs[0] == pytest.approx(0.5098249009402023, abs=1e-15)

    def test_infer_is_repeatable(self):
        m = build_model(small(2), 4, 3, seed=2)
        x = Rng(1).uniform(20, 0, 1).reshape(5, 4)
        a, _ = forward(m, x)
        b, _ = forward(m, x)
        assert a.tobytes() == b.tobytes()

    def test_zero_dense_weights(self):
        x = Rng(1).uniform(20, 0, 1).reshape(5, 4)
        m2 = build_model(small(2), 4, 2)
        m2.dense.w[:] = 0
        np.testing.assert_array_equal(forward(m2, x)[0], 0.5)
        m3 = build_model(small(2), 4, 3)
        m3.dense.w[:] = 0
        np.testing.assert_array_equal(forward(m3, x)[0], 1 / 3)

    def test_probabilities_in_range(self):
        m = build_model(small(3), 6, 3, seed=4)
        x = Rng(5).uniform(60, -100, 100).reshape(10, 6)
        p = forward(m, x)[0]
        assert np.all(np.isfinite(p)) and np.all((p >= 0) & (p <= 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_error(self):
        from rnnsecure.tensor import ShapeError
        with pytest.raises(ShapeError):
            forward(build_model(small(), 4, 2), np.zeros((2, 5)))


class TestPredict:
    def test_sigmoid_threshold_inclusive(self):
        assert labels_from_probs(np.array([0.5, 0.4999999])).tolist() == [1, 0]

    def test_softmax_tie_and_argmax(self):
        assert labels_from_probs(np.array([[1 / 3] * 3, [0.2, 0.5, 0.3]])).tolist() == [0, 1]

    def test_monotone_transform_invariance(self):
        p = Rng(9).uniform(40, 0.01, 1).reshape(10, 4)
        for f in (np.log, np.sqrt, lambda v: 3 * v + 1):
            assert labels_from_probs(f(p)).tolist() == labels_from_probs(p).tolist()

    def test_zero_dense_model_predicts_class_one(self):
        m = build_model(small(), 4, 2)
        m.dense.w[:] = 0
        labels, _ = predict(m, np.zeros((3, 4)))
        assert labels.tolist() == [1, 1, 1]


class TestTrain:
    def test_zero_epochs(self):
        m = build_model(small(), 4, 2)
        before = snapshot(m)
        hist = train(m, blob(), TrainConfig(epochs=0))
        assert len(hist) == 0
        for name, p in m.parameters():
            assert p.tobytes() == before[name].tobytes()

    def test_zero_learning_rate_leaves_parameters(self):
        m = build_model(small(2), 4, 2)
        before = snapshot(m)
        train(m, blob(), TrainConfig(learning_rate=0.0, epochs=3, batch_size=32))
        for name, p in m.parameters():
            assert p.tobytes() == before[name].tobytes()

    def test_blob_converges(self):
        m = build_model(small(1, 16), 4, 2, seed=0)
        hist = train(m, blob(seed=7), TrainConfig(learning_rate=0.01, epochs=100, seed=0))
        assert len(hist) == 100
        assert hist.losses[-1] < 0.5 * hist.losses[0]
        assert hist.epochs[-1].accuracy == 1.0

    def test_deterministic_history_and_parameters(self):
        runs = []
        for _ in range(2):
            m = build_model(small(2), 4, 2, seed=5)
            h = train(m, blob(), TrainConfig(epochs=4, batch_size=16, seed=3))
            runs.append((h, snapshot(m)))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert runs[0][1][name].tobytes() == runs[1][1][name].tobytes()

    def test_last_singleton_batch_is_dropped(self):
        ds = blob(n=10)
        m = build_model(small(), 4, 2)
        hist = train(m, ds.subset(np.arange(9)), TrainConfig(epochs=1, batch_size=4))
        assert len(hist) == 1

    def test_momentum_trains(self):
        m = build_model(small(1, 16), 4, 2)
        hist = train(m, blob(), TrainConfig(epochs=20, momentum=0.9, batch_size=32))
        assert hist.losses[-1] < hist.losses[0]

    def test_divergence_names_epoch_and_batch(self):
        m = build_model(small(1, 8, use_batchnorm=False), 4, 2)
        m.dense.w[:] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 0, batch 0"):
            train(m, blob(), TrainConfig(epochs=2))

    def test_bad_labels(self):
        ds = Dataset(np.zeros((4, 4)), np.array([0, 1, 2, 0]), DatasetSchema("custom", 4, 3))
        with pytest.raises(ValueError):
            train(build_model(small(), 4, 2), ds, TrainConfig(epochs=1))

    @pytest.mark.parametrize("cfg", [TrainConfig(epochs=1001), TrainConfig(batch_size=1), TrainConfig(learning_rate=-1)])
    def test_config_errors(self, cfg):
        with pytest.raises(ConfigError):
            train(build_model(small(), 4, 2), blob(), cfg)


class TestInputStandardisation:
    def test_fitted_on_first_training_run(self):
        ds = blob()
        m = build_model(small(), 4, 2)
        train(m, ds, TrainConfig(epochs=1, batch_size=32))
        np.testing.assert_allclose(m.input_mean, ds.x.mean(axis=0), atol=1e-15)
        np.testing.assert_allclose(m.input_scale, ds.x.std(axis=0), atol=1e-15)
        before = m.input_mean.copy()
        train(m, ds.subset(np.arange(0, 200, 2)), TrainConfig(epochs=1, batch_size=32))
        assert m.input_mean.tobytes() == before.tobytes()

    def test_forward_sees_standardised_rows(self):
        m = build_model(small(), 3, 2, seed=1)
        x = Rng(2).uniform(12, 5, 9).reshape(4, 3)
        m.input_mean[:] = [1.0, 2.0, 3.0]
        m.input_scale[:] = [2.0, 4.0, 0.5]
        plain = build_model(small(), 3, 2, seed=1)
        z = (x - [1.0, 2.0, 3.0]) / [2.0, 4.0, 0.5]
        assert forward(m, x)[0].tobytes() == forward(plain, z)[0].tobytes()

    def test_constant_column_and_opt_out(self):
        x = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        ds = Dataset(x, np.arange(10) % 2, DatasetSchema("custom", 2, 2))
        m = build_model(small(), 2, 2)
        train(m, ds, TrainConfig(epochs=1, batch_size=5))
        assert m.input_scale[0] == 1.0 and m.input_mean[0] == 3.0
        off = build_model(small(standardize_inputs=False), 2, 2)
        train(off, ds, TrainConfig(epochs=1, batch_size=5))
        assert not np.any(off.input_mean) and np.all(off.input_scale == 1.0)


class TestGradientCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_two_layers(self, seed):
        r = Rng(seed)
        m = build_model(small(2, 8), 5, 2, seed=seed)
        assert gradient_check(m, r.uniform(20, -1, 1).reshape(4, 5), r.integers(4, 2)) <= 1e-4

    @pytest.mark.parametrize("depth", [1, 6])
    def test_depth_extremes_softmax(self, depth):
        r = Rng(depth)
        m = build_model(small(depth, 8), 4, 3, seed=depth)
        assert gradient_check(m, r.uniform(16, -1, 1).reshape(4, 4), r.integers(4, 3)) <= 1e-4

    def test_flat_loss_reports_zero(self):
        m = build_model(small(1, 4), 3, 2)
        for _, p in m.parameters():
            p[:] = 0
        # a saturated head: sigmoid(50) is exactly 1.0, so small perturbations leave the loss unchanged
        m.dense.b[:] = 50.0
        assert gradient_check(m, np.ones((4, 3)), np.ones(4, dtype=int)) == 0.0

    def test_sampled_coordinates(self):
        m = build_model(small(2, 40), 3, 2)
        assert m.num_parameters() > 2000
        r = Rng(1)
        assert gradient_check(m, r.uniform(12, -1, 1).reshape(4, 3), np.array([0, 1, 1, 0]), sample=50) <= 1e-4


class TestPersistence:
    @pytest.mark.parametrize("topo,k", [(small(2), 3), (small(1, use_batchnorm=False), 2)])
    def test_round_trip_bit_exact(self, tmp_path, topo, k):
        m = build_model(topo, 4, k, seed=8)
        train(m, blob(), TrainConfig(epochs=2, batch_size=32)) if k == 2 else None
        path = tmp_path / "m.bin"
        save_model(m, path)
        back = load_model(path)
        assert back.topology == m.topology and back.head == m.head
        for (na, a), (nb, b) in zip(m.parameters() + m.buffers(), back.parameters() + back.buffers()):
            assert na == nb and a.tobytes() == b.tobytes()
        x = Rng(0).uniform(8, 0, 1).reshape(2, 4)
        assert forward(m, x)[0].tobytes() == forward(back, x)[0].tobytes()

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError):
            load_model(path)
