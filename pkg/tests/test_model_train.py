import numpy as np
import pytest

from heihnn import diffmath as dm
from heihnn.data import Dataset, synth_generate
from heihnn.diffmath import ShapeError, Value
from heihnn.hypergraph import build_hypergraph
from heihnn.model import SWEEP_GRID, HeIHNN, ModelConfig, predict
from heihnn.propagation import StageConfig
from heihnn.training import (Optimizer, TrainConfig, TrainingDiverged, accuracy, evaluate,
                             gradcheck_instance, micro_f1, model_gradient_errors, pgd_perturb,
                             run_once, sweep, train)

SMALL = ModelConfig(hidden=8, att_width=4)


@pytest.fixture(scope="module")
def small_synth():
    return synth_generate(nodes_per_class=12, edge_size=4, n_hyperedges=30, seed=3)


@pytest.fixture(scope="module")
def trained(small_synth):
    model, ds, _ = run_once(SMALL, TrainConfig(lr=0.01, epochs=40), small_synth, seed=0)
    return model, ds


class TestForward:
    def test_hand_trace(self):
        cfg = ModelConfig(hidden=1, att_width=1, dropout=0.0,
                          stage=StageConfig(use_attention=False, activation="identity"))
        model = HeIHNN(cfg, 1, 1)
        model.load({k: np.ones_like(v.data) for k, v in model.named_parameters().items()} | {"b_out": np.zeros((1, 1))})
        h = build_hypergraph(1, [[0]])
        # layer 1 gives (x, y) = (3, 2); layer 2: y = 3 + 2 = 5, then x = 5 + 3 = 8
        assert model(h, [[1.0]]).data[0, 0] == 8.0

    def test_output_shape(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        assert model(small_synth.hypergraph, small_synth.features).shape == (small_synth.hypergraph.n, 4)

    def test_eval_deterministic(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        a = model(small_synth.hypergraph, small_synth.features).data
        b = model(small_synth.hypergraph, small_synth.features).data
        np.testing.assert_array_equal(a, b)

    def test_training_mode_uses_dropout(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        a = model.forward(small_synth.hypergraph, small_synth.features, training=True).data
        b = model.forward(small_synth.hypergraph, small_synth.features).data
        assert not np.array_equal(a, b)

    def test_width_mismatch(self, small_synth):
        model = HeIHNN(SMALL, 5, 4)
        with pytest.raises(ShapeError, match="do not match"):
            model(small_synth.hypergraph, small_synth.features)

    def test_parameter_names(self):
        names = HeIHNN(ModelConfig(layers=2, stage=StageConfig(chebyshev_k=2)), 3, 2).named_parameters()
        for i in range(2):
            for k in ("theta1", "theta2", "theta3", "wq", "wk", "wq2", "wk2", "cheb"):
                assert f"layer{i}.{k}" in names
        assert {"w_in", "w_out", "b_out"} <= set(names)

    def test_load_rejects_bad_shape(self):
        model = HeIHNN(SMALL, 3, 2)
        arrays = model.snapshot()
        arrays["w_out"] = np.zeros((2, 2))
        with pytest.raises(ShapeError, match="w_out"):
            model.load(arrays)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(layers=0)
        with pytest.raises(ValueError):
            ModelConfig(dropout=1.0)

    def test_sweep_grid(self):
        assert SWEEP_GRID == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


class TestGradients:
    def test_full_model(self):
        ds = gradcheck_instance(seed=1)
        model = HeIHNN(ModelConfig(hidden=4, att_width=3, dropout=0.0), 3, 3)
        errors = model_gradient_errors(model, ds)
        assert max(errors.values()) < 1e-4, errors

    def test_with_hor_and_chebyshev(self):
        ds = gradcheck_instance(seed=2)
        stage = StageConfig(hor_n2he=True, hor_he2n=True, chebyshev_k=2, activation="tanh")
        model = HeIHNN(ModelConfig(hidden=4, att_width=3, dropout=0.0, stage=stage), 3, 3)
        errors = model_gradient_errors(model, ds)
        assert max(errors.values()) < 1e-4, errors

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise_with_roundoff_floor(self, seed):
        # entries of order 1e-8 sit at the finite-difference noise floor (~1e-11 at step 1e-5),
        # so compare elementwise with a small absolute allowance instead of a pure ratio
        ds = gradcheck_instance(seed=seed)
        cfg = ModelConfig(hidden=4, att_width=3, dropout=0.0, seed=seed)
        model = HeIHNN(cfg, 3, 3)

        def loss():
            logits = model.forward(ds.hypergraph, Value(ds.features), training=False)
            return dm.cross_entropy(logits, ds.labels, ds.train_idx)

        params = model.trainable()
        dm.zero_grads(params.values())
        dm.backward(loss())
        for name, p in params.items():
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-5
                up = loss().data[0, 0]
                flat[i] = orig - 1e-5
                down = loss().data[0, 0]
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / 2e-5
            np.testing.assert_allclose(p.grad, numeric, rtol=1e-4, atol=1e-9, err_msg=name)

    def test_needs_dropout_off(self):
        with pytest.raises(ValueError, match="dropout"):
            model_gradient_errors(HeIHNN(ModelConfig(hidden=4), 3, 3), gradcheck_instance())


class TestOptimizer:
    def _params(self):
        rng = np.random.default_rng(0)
        return {"a": Value(rng.normal(size=(3, 2)), requires_grad=True),
                "b": Value(rng.normal(size=(1, 4)), requires_grad=True)}

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_zero_gradient_decays_by_factor(self, kind):
        params = self._params()
        cfg = TrainConfig(lr=0.1, weight_decay=0.0005, optimizer=kind)
        opt = Optimizer(params, cfg)
        for _ in range(5):
            before = {k: v.data.copy() for k, v in params.items()}
            opt.zero_grad()
            opt.step()
            for k, v in params.items():
                np.testing.assert_allclose(v.data, before[k] * (1 - 0.1 * 0.0005), rtol=1e-15)
                assert np.linalg.norm(v.data) < np.linalg.norm(before[k])

    def test_sgd_step(self):
        p = Value([[1.0, -2.0]], requires_grad=True)
        p.grad[...] = [[0.5, 0.5]]
        Optimizer({"p": p}, TrainConfig(lr=0.1, weight_decay=0.0, optimizer="sgd")).step()
        np.testing.assert_allclose(p.data, [[0.95, -2.05]], rtol=1e-15)

    def test_adam_first_step_is_lr_sign(self):
        p = Value([[1.0, -2.0]], requires_grad=True)
        p.grad[...] = [[3.0, -0.01]]
        Optimizer({"p": p}, TrainConfig(lr=0.1, weight_decay=0.0)).step()
        np.testing.assert_allclose(p.data, [[0.9, -1.9]], rtol=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-1e-3)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")


class TestTrain:
    def test_lr_zero_leaves_parameters(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        before = model.snapshot()
        train(model, small_synth, TrainConfig(lr=0.0, epochs=5))
        for k, v in model.snapshot().items():
            np.testing.assert_array_equal(v, before[k])

    def test_loss_decreases_on_benchmark(self):
        ds = synth_generate()
        model = HeIHNN(ModelConfig(), ds.features.shape[1], ds.n_classes)
        hist = train(model, ds, TrainConfig(epochs=50))
        assert hist.losses()[49] < hist.losses()[0]

    def test_history_shape(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        hist = train(model, small_synth, TrainConfig(epochs=7))
        assert [r.epoch for r in hist.records] == list(range(1, 8))
        assert set(hist.params) == set(model.named_parameters())

    def test_determinism(self, small_synth):
        _, _, a = run_once(SMALL, TrainConfig(epochs=15), small_synth, seed=4)
        _, _, b = run_once(SMALL, TrainConfig(epochs=15), small_synth, seed=4)
        assert a.records == b.records
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_early_stop(self, small_synth):
        model = HeIHNN(SMALL.with_(dropout=0.0), small_synth.features.shape[1], 4)
        hist = train(model, small_synth, TrainConfig(lr=0.0, epochs=50, patience=3))
        assert len(hist.records) == 4  # first epoch sets the best loss, then three stale ones

    def test_divergence_names_epoch(self, small_synth):
        model = HeIHNN(SMALL, small_synth.features.shape[1], 4)
        model.w_out.data[0, 0] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 1"):
            train(model, small_synth, TrainConfig(epochs=3))


class TestMetrics:
    LABELS = np.array([0, 1, 2, 1])

    def test_all_correct(self):
        assert accuracy(np.eye(3)[self.LABELS], self.LABELS, range(4)) == 1.0

    def test_none_correct(self):
        assert accuracy(np.eye(3)[(self.LABELS + 1) % 3], self.LABELS, range(4)) == 0.0

    def test_three_of_four(self):
        logits = np.eye(3)[[0, 1, 2, 0]]
        assert accuracy(logits, self.LABELS, range(4)) == 0.75

    def test_tie_goes_to_lowest_class(self):
        np.testing.assert_array_equal(predict(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])), [0, 1])

    def test_empty_indices(self):
        with pytest.raises(ValueError):
            accuracy(np.eye(3), [0, 1, 2], [])

    def test_positive_row_scaling(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(30, 4))
        labels = rng.integers(0, 4, size=30)
        scaled = logits * rng.uniform(0.1, 10, size=(30, 1))
        assert accuracy(scaled, labels, range(30)) == accuracy(logits, labels, range(30))

    def test_micro_f1_equals_accuracy(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            labels = rng.integers(0, 5, size=40)
            logits = rng.normal(size=(40, 5))
            assert micro_f1(predict(logits), labels) == pytest.approx(accuracy(logits, labels, range(40)), abs=1e-15)

    def test_evaluate(self, trained):
        model, ds = trained
        logits = model(ds.hypergraph, ds.features)
        assert evaluate(model, ds, ds.test_idx) == accuracy(logits, ds.labels, ds.test_idx)


class TestPgd:
    def test_eps_zero_unchanged(self, trained):
        model, ds = trained
        x = pgd_perturb(model, ds, 0.0)
        np.testing.assert_array_equal(x, ds.features)

    def test_projection_contract(self, trained):
        model, ds = trained
        x = pgd_perturb(model, ds, 0.002)
        assert np.abs(x - ds.features).max() <= 0.002
        np.testing.assert_array_equal(x[ds.train_idx], ds.features[ds.train_idx])
        assert np.any(x[ds.test_idx] != ds.features[ds.test_idx])

    def test_loss_does_not_drop(self, trained):
        model, ds = trained
        x = pgd_perturb(model, ds, 0.05, steps=5)

        def loss(feats):
            return dm.cross_entropy(model(ds.hypergraph, feats), ds.labels, ds.test_idx).data[0, 0]

        assert loss(x) >= loss(ds.features)

    def test_negative_eps(self, trained):
        with pytest.raises(ValueError):
            pgd_perturb(*trained, -0.1)

    def test_original_not_mutated(self, trained):
        model, ds = trained
        before = ds.features.copy()
        pgd_perturb(model, ds, 0.01)
        np.testing.assert_array_equal(ds.features, before)


class TestSweep:
    TINY = TrainConfig(epochs=2)

    def test_single_cell_matches_plain_run(self, small_synth):
        res = sweep(SMALL, self.TINY, small_synth, alphas=[0.4], betas=[0.8], seed=5)
        model, ds, _ = run_once(SMALL.with_(alpha=0.4, beta=0.8), self.TINY, small_synth, 5)
        assert res.acc.shape == (1, 1)
        assert res.acc[0, 0] == evaluate(model, ds, ds.test_idx)

    def test_full_grid_cardinality(self, small_synth):
        res = sweep(SMALL.with_(hidden=2, att_width=2), TrainConfig(epochs=1), small_synth)
        rows = list(res.rows())
        assert len(rows) == 49
        assert [r[0] for r in rows[:7]] == [0.0] * 7
        assert res.best[2] == res.acc.max()

    def test_parallel_matches_serial(self, small_synth):
        grid = dict(alphas=[0.0, 1.0], betas=[0.0, 1.0])
        a = sweep(SMALL, self.TINY, small_synth, **grid, jobs=1)
        b = sweep(SMALL, self.TINY, small_synth, **grid, jobs=2)
        np.testing.assert_array_equal(a.acc, b.acc)

    def test_empty_grid(self, small_synth):
        with pytest.raises(ValueError):
            sweep(SMALL, self.TINY, small_synth, alphas=[])


def test_gradcheck_instance_covers_nodes():
    ds = gradcheck_instance(seed=9)
    assert isinstance(ds, Dataset)
    assert ds.hypergraph.n == 6 and ds.hypergraph.m == 4
    assert np.all(ds.hypergraph.node_degrees >= 1)
