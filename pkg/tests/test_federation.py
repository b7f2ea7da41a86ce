"""Server aggregation, layer selection and full federated runs."""

from dataclasses import replace

import numpy as np
import pytest

from core import federation
from core.data import PartitionSpec, gen_blobs, iid_partition, partition_dirichlet
from core.errors import ShapeMismatchError
from core.federation import (Algorithm, BackwardMode, LayerStrategy, TrainConfig, aggregate,
                             cosine_alignment, initial_fa_layers, local_train, run_training,
                             select_clients, select_fa_layer, server_momentum_step,
                             zero_momentum_buffer)
from core.feedback import FeedbackMode
from core.metrics import rescale_holds
from core.nn import (Activation, DenseLayer, MlpModel, OptimizerState, backward_bp, cross_entropy,
                     flatten_params, forward, init_model, sgd_step)
from core.seeding import stream
from core.tracing import TraceRecorder


def _model(weight, bias):
    return MlpModel([DenseLayer(np.asarray(weight, dtype=float), np.asarray(bias, dtype=float),
                                Activation.IDENTITY)])


class TestSelectClients:
    def test_fraction_of_hundred(self):
        chosen = select_clients(100, 0.1, stream(0, "select", 0))
        assert len(chosen) == 10
        assert len(set(chosen)) == 10
        assert chosen == sorted(chosen)
        assert all(0 <= c < 100 for c in chosen)

    def test_at_least_one(self):
        assert len(select_clients(5, 0.01, stream(0, "select", 0))) == 1

    def test_full_participation(self):
        assert select_clients(4, 1.0, stream(0, "select", 0)) == [0, 1, 2, 3]

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_invalid_fraction(self, fraction):
        with pytest.raises(ValueError):
            select_clients(4, fraction, stream(0, "select", 0))


class TestAggregate:
    def test_weighted_mean(self):
        a = _model([[1.0, 2.0]], [0.5])
        b = _model([[3.0, -2.0]], [1.5])
        result = aggregate([a, b], [1, 3])
        np.testing.assert_allclose(result.layers[0].weight, [[2.5, -1.0]], atol=1e-12)
        np.testing.assert_allclose(result.layers[0].bias, [1.25], atol=1e-12)

    def test_single_model_is_identity(self, small_model):
        result = aggregate([small_model], [7])
        np.testing.assert_allclose(flatten_params(result), flatten_params(small_model), atol=1e-15)

    def test_result_within_client_bounds(self, rng):
        models = [init_model([3, 4, 2], Activation.RELU, stream(s, "init")) for s in range(5)]
        sizes = rng.integers(1, 50, size=5).tolist()
        flat = np.vstack([flatten_params(m) for m in models])
        result = flatten_params(aggregate(models, sizes))
        assert np.all(result >= flat.min(axis=0) - 1e-12)
        assert np.all(result <= flat.max(axis=0) + 1e-12)

    def test_inputs_not_modified(self):
        a = _model([[1.0]], [0.0])
        b = _model([[3.0]], [0.0])
        aggregate([a, b], [1, 1])
        assert a.layers[0].weight[0, 0] == 1.0

    def test_rejects_zero_weight(self):
        with pytest.raises(ValueError):
            aggregate([_model([[1.0]], [0.0])], [0])

    def test_rejects_mixed_architectures(self):
        with pytest.raises(ShapeMismatchError):
            aggregate([_model([[1.0]], [0.0]), _model([[1.0, 2.0]], [0.0])], [1, 1])


class TestServerMomentum:
    def test_zero_coefficient_returns_aggregate(self):
        prev = _model([[1.0]], [0.0])
        agg = _model([[0.5]], [0.1])
        new, _ = server_momentum_step(prev, agg, zero_momentum_buffer(prev), 0.0)
        np.testing.assert_allclose(new.layers[0].weight, [[0.5]])
        np.testing.assert_allclose(new.layers[0].bias, [0.1])

    def test_accumulates_pseudo_gradient(self):
        prev = _model([[1.0]], [0.0])
        agg = _model([[0.5]], [0.0])
        new, buffer = server_momentum_step(prev, agg, zero_momentum_buffer(prev), 0.9)
        np.testing.assert_allclose(new.layers[0].weight, [[0.5]])
        agg2 = _model([[0.0]], [0.0])
        new2, buffer2 = server_momentum_step(new, agg2, buffer, 0.9)
        # buffer = 0.9 * 0.5 + 0.5
        np.testing.assert_allclose(buffer2[0][0], [[0.95]])
        np.testing.assert_allclose(new2.layers[0].weight, [[-0.45]])

    def test_buffer_decays_at_fixed_point(self):
        model = _model([[2.0]], [0.0])
        buffer = [(np.array([[1.0]]), np.array([0.25]))]
        for k in range(1, 5):
            new, buffer = server_momentum_step(model, model.copy(), buffer, 0.5)
            np.testing.assert_array_equal(buffer[0][0], [[0.5 ** k]])
            np.testing.assert_array_equal(buffer[0][1], [0.25 * 0.5 ** k])
            np.testing.assert_allclose(new.layers[0].weight, model.layers[0].weight - 0.5 ** k, atol=1e-15)
            model = new


class TestCosineAlignment:
    def test_hand_example(self):
        updates = [[np.array([1.0, 0.0])], [np.array([0.0, 1.0])]]
        assert cosine_alignment(updates)[0] == pytest.approx(np.sqrt(2) / 2, abs=1e-12)

    def test_scale_invariant(self, rng):
        updates = [[rng.standard_normal(6), rng.standard_normal(3)] for _ in range(4)]
        scaled = [[5.0 * layer for layer in client] for client in updates]
        np.testing.assert_allclose(cosine_alignment(updates), cosine_alignment(scaled), atol=1e-12)

    def test_identical_updates_score_one(self):
        updates = [[np.array([1.0, 2.0])] for _ in range(3)]
        assert cosine_alignment(updates)[0] == pytest.approx(1.0)

    def test_undefined_when_update_vanishes(self):
        updates = [[np.array([1.0, 0.0])], [np.zeros(2)]]
        assert cosine_alignment(updates) == [None]

    def test_bounded(self, rng):
        updates = [[rng.standard_normal(5)] for _ in range(6)]
        score = cosine_alignment(updates)[0]
        assert -1.0 <= score <= 1.0


class TestSelectFaLayer:
    def test_lowest_and_highest(self):
        z = [0.9, 0.2, 0.5]
        assert select_fa_layer(z, LayerStrategy.LOWEST) == {2}
        assert select_fa_layer(z, LayerStrategy.HIGHEST) == {1}

    def test_ties_go_to_smaller_layer(self):
        z = [0.3, 0.3, 0.3]
        assert select_fa_layer(z, LayerStrategy.LOWEST) == {1}
        assert select_fa_layer(z, LayerStrategy.HIGHEST) == {1}

    def test_undefined_scores_are_skipped(self):
        assert select_fa_layer([None, 0.4, 0.1], LayerStrategy.HIGHEST) == {2}
        assert select_fa_layer([None, None], LayerStrategy.LOWEST) == frozenset()

    def test_eligible_and_count(self):
        z = [0.1, 0.2, 0.3, 0.4]
        assert select_fa_layer(z, LayerStrategy.LOWEST, eligible=[2, 3, 4]) == {2}
        assert select_fa_layer(z, LayerStrategy.LOWEST, count=2, eligible=[2, 3, 4]) == {2, 3}

    def test_fixed_and_none(self):
        assert select_fa_layer([0.5], LayerStrategy.FIXED, fixed_layer=3) == {3}
        assert select_fa_layer([0.5], LayerStrategy.NONE) == frozenset()

    def test_initial_layers(self):
        assert initial_fa_layers(TrainConfig()) == frozenset()
        cfg = TrainConfig(backward_mode="flfa", layer_strategy="fixed", fixed_layer=2)
        assert initial_fa_layers(cfg) == {2}
        assert initial_fa_layers(replace(cfg, start_layers=(3,))) == {3}


class TestTrainConfig:
    def test_enums_from_strings(self):
        cfg = TrainConfig(backward_mode="FLFA", feedback_mode="random_fixed", algorithm="fedprox")
        assert cfg.backward_mode is BackwardMode.FLFA
        assert cfg.feedback_mode is FeedbackMode.RANDOM_FIXED
        assert cfg.algorithm is Algorithm.FEDPROX
        assert cfg.method_label == "flfa_random"

    def test_validation_names_fields(self):
        errors = TrainConfig(client_fraction=0.0, lr=-1.0).validate()
        assert any(e.startswith("client_fraction:") for e in errors)
        assert any(e.startswith("lr:") for e in errors)

    def test_fixed_strategy_needs_layer(self):
        errors = TrainConfig(layer_strategy="fixed").validate()
        assert errors == ["fixed_layer: required when layer_strategy is 'fixed'"]

    def test_lr_decay(self):
        assert TrainConfig(lr=0.1, lr_decay=0.5).lr_at(2) == pytest.approx(0.025)


class TestLocalTrain:
    def test_global_model_untouched(self, small_model, shards, train_cfg):
        before = flatten_params(small_model)
        result = local_train(shards[0], small_model, train_cfg, [])
        np.testing.assert_array_equal(flatten_params(small_model), before)
        assert not np.array_equal(flatten_params(result.model), before)

    def test_fixed_step_count(self, small_model, shards, train_cfg):
        cfg = replace(train_cfg, local_steps=4)
        result = local_train(shards[0], small_model, cfg, [])
        assert result.steps == 4
        assert len(result.gradient_gaps) == 4

    def test_fedprox_pulls_towards_global(self, small_model, shards, train_cfg):
        plain = local_train(shards[0], small_model, replace(train_cfg, local_epochs=5), [])
        prox = local_train(shards[0], small_model,
                           replace(train_cfg, local_epochs=5, algorithm="fedprox", prox_mu=5.0), [])
        start = flatten_params(small_model)
        assert (np.linalg.norm(flatten_params(prox.model) - start)
                < np.linalg.norm(flatten_params(plain.model) - start))

    def test_zero_mu_fedprox_matches_fedavg(self, small_model, shards, train_cfg):
        plain = local_train(shards[0], small_model, replace(train_cfg, local_epochs=3), [])
        prox = local_train(shards[0], small_model,
                           replace(train_cfg, local_epochs=3, algorithm="fedprox", prox_mu=0.0), [])
        np.testing.assert_array_equal(flatten_params(prox.model), flatten_params(plain.model))

    def test_full_batch_round_matches_centralized_step(self, blobs, small_model):
        shards = iid_partition(blobs, 3, seed=0).shards
        cfg = TrainConfig(rounds=1, local_epochs=1, lr=0.1, batch_size=blobs.size, seed=0, workers=1)
        locals_ = [local_train(shard, small_model, cfg, []).model for shard in shards]
        federated = aggregate(locals_, [shard.sample_count for shard in shards])

        central = small_model.copy()
        trace = forward(central, blobs.features)
        _, dlogits = cross_entropy(trace.output, blobs.labels)
        sgd_step(central, backward_bp(central, trace, dlogits), OptimizerState.init(central, 0.1))
        np.testing.assert_allclose(flatten_params(federated), flatten_params(central), rtol=0, atol=1e-10)


class TestRunTraining:
    def _run(self, blobs, shards, cfg, **kwargs):
        model = init_model([blobs.dim, 6, 5, blobs.class_count], Activation.TANH, stream(cfg.seed, "init"))
        return run_training(cfg, blobs, shards, model, **kwargs)

    def test_deterministic_across_worker_counts(self, blobs, shards, train_cfg):
        cfg = replace(train_cfg, backward_mode="flfa", client_fraction=0.7)
        a = self._run(blobs, shards, replace(cfg, workers=1))
        b = self._run(blobs, shards, replace(cfg, workers=4))
        assert [r.drift for r in a.records] == [r.drift for r in b.records]
        assert [r.selected_clients for r in a.records] == [r.selected_clients for r in b.records]
        np.testing.assert_array_equal(flatten_params(a.model), flatten_params(b.model))

    def test_flfa_without_fa_layers_matches_bp(self, blobs, shards, train_cfg):
        bp = self._run(blobs, shards, train_cfg)
        fa = self._run(blobs, shards, replace(train_cfg, backward_mode="flfa", layer_strategy="none"))
        assert [r.drift for r in bp.records] == [r.drift for r in fa.records]
        assert all(r.fa_layers == [] for r in fa.records)
        np.testing.assert_array_equal(flatten_params(bp.model), flatten_params(fa.model))

    def test_record_contents(self, blobs, shards, train_cfg):
        seen = []
        result = self._run(blobs, shards, replace(train_cfg, backward_mode="flfa"),
                           representation=True, on_round=seen.append)
        assert [r.round for r in result.records] == [0, 1, 2]
        assert seen == result.records
        first = result.records[0]
        assert first.fa_layers == []
        assert len(first.alignment) == 3
        for record in result.records:
            assert record.drift >= 0.0
            assert 0.0 <= record.eval_accuracy <= 1.0
            assert set(record.next_fa_layers) <= {2, 3}
            assert set(record.representation) == {"intra", "inter", "separability"}
        assert result.records[1].fa_layers == first.next_fa_layers

    def test_global_weights_start_without_gap(self, blobs, shards, train_cfg):
        cfg = replace(train_cfg, backward_mode="flfa", layer_strategy="fixed", fixed_layer=2)
        gw = self._run(blobs, shards, cfg)
        assert all(r.g_hat_round_start == 0.0 for r in gw.records)
        assert gw.records[-1].g_hat > 0.0
        random = self._run(blobs, shards, replace(cfg, feedback_mode="random_fixed"))
        assert random.records[0].g_hat_round_start > 0.0
        assert set(random.random_bank) == {1, 2, 3}

    def test_zero_sample_clients_are_excluded(self, train_cfg):
        ds = gen_blobs(2, 2, 3, 1.0, seed=0)
        result = partition_dirichlet(ds, PartitionSpec(6, 0.05, seed=1))
        assert result.empty_clients
        model = init_model([2, 4, 2], Activation.TANH, stream(0, "init"))
        run = run_training(replace(train_cfg, rounds=1), ds, result.shards, model)
        record = run.records[0]
        assert record.sample_counts.count(0) == len(result.empty_clients)
        assert len(record.updates) == 6 - len(result.empty_clients)
        assert np.all(np.isfinite(flatten_params(run.model)))

    def test_single_eligible_layer_is_reported_once(self, blobs, shards, train_cfg, monkeypatch):
        messages = []
        monkeypatch.setattr(federation, "log_info", lambda component, message, *a, **k: messages.append(message))
        cfg = replace(train_cfg, backward_mode="flfa")
        model = init_model([blobs.dim, 6, blobs.class_count], Activation.TANH, stream(cfg.seed, "init"))
        result = run_training(cfg, blobs, shards, model)
        assert sum("no choice" in m for m in messages) == 1
        assert all(r.next_fa_layers in ([], [2]) for r in result.records)
        messages.clear()
        self._run(blobs, shards, cfg)
        assert not any("no choice" in m for m in messages)

    def test_fixed_layer_must_exist(self, blobs, shards, train_cfg):
        cfg = replace(train_cfg, backward_mode="flfa", layer_strategy="fixed", fixed_layer=9)
        with pytest.raises(ValueError, match="fixed_layer"):
            self._run(blobs, shards, cfg)

    def test_rescale_holds_on_every_step(self, blobs, shards):
        cfg = TrainConfig(rounds=35, lr=0.1, batch_size=4, local_steps=3, seed=2, workers=1,
                          backward_mode="flfa", layer_strategy="fixed", fixed_layer=2,
                          start_layers=(2,))
        recorder = TraceRecorder()
        self._run(blobs, shards[:2], cfg, recorder=recorder)
        samples = recorder.rescale_samples
        assert len(samples) >= 200
        assert all(rescale_holds(s) for s in samples)
