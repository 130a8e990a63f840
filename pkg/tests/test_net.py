"""Selector network behavior: heads, training loop, inference, persistence."""

import json
import math

import numpy as np
import pytest

from adsel.core import Window, slide_windows
from adsel.data import AnomalySpec, generate_synthetic
from adsel.detectors import DetectorKind, ParamGrid, default_grid, grid_fingerprint
from adsel.net import (
    ArchitectureSpec,
    ConvBlockSpec,
    HeadWiring,
    NetError,
    SelectorNet,
    TrainConfig,
    detect_adaptive,
    evaluate_network,
    fcn_forward,
    heads_forward,
    joint_loss,
    joint_macro_f1,
    load_model,
    predict,
    save_model,
    train,
)
from adsel.oracle import build_dataset

from test_nn_gradients import small_grids, tiny_spec


def tiny_examples(n_series=6, length=64, seed=20):
    # Long small shifts split the window mean, so CUSUM wins those windows
    # and the labels cover both detector classes.
    series = []
    for j in range(n_series):
        if j % 2 == 0:
            spec = AnomalySpec("outlier", 6.0, 0.5, 1)
        else:
            spec = AnomalySpec("mean_shift", 1.5, 0.4, int(length * 0.3))
        series += generate_synthetic(
            1, length, base="noise", noise_sigma=0.15, seed=seed + j, anomalies=[spec]
        )
    return build_dataset(series, length, length, small_grids())


class TestArchitectureSpec:
    def test_for_grid_sizes_from_default(self):
        spec = ArchitectureSpec.for_grid(default_grid())
        assert spec.num_detectors == 5
        assert spec.max_param_width == 6
        assert spec.variant is HeadWiring.SHARED_HIDDEN

    def test_variant_parsing(self):
        assert HeadWiring.parse("NS") is HeadWiring.SEPARATE
        assert HeadWiring.parse("SSR") is HeadWiring.SHARED_TRUNK
        assert HeadWiring.parse("ATSDLN") is HeadWiring.SHARED_HIDDEN
        with pytest.raises(NetError, match="unknown variant"):
            HeadWiring.parse("CNN")

    def test_empty_blocks_rejected(self):
        with pytest.raises(NetError):
            ArchitectureSpec(conv_blocks=())

    def test_json_round_trip(self):
        spec = tiny_spec(HeadWiring.SEPARATE)
        assert ArchitectureSpec.from_json(spec.to_json()) == spec

    def test_grid_mismatch_rejected(self):
        with pytest.raises(NetError, match="detectors"):
            SelectorNet(tiny_spec(), default_grid(), seed=0)


class TestForwardContracts:
    def test_all_zero_input_pools_to_zero_at_init(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=5)
        x = np.zeros((2, 1, 32))
        for train_mode in (True, False):
            feats = fcn_forward(net, x, train=train_mode)
            assert np.all(feats == 0.0)

    def test_feature_width_is_last_block_filters(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=5)
        feats = fcn_forward(net, np.random.default_rng(0).standard_normal((3, 1, 20)))
        assert feats.shape == (3, 4)

    def test_head_probabilities_normalized(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=5)
        x = np.random.default_rng(1).standard_normal((4, 1, 24))
        p, q, hidden = heads_forward(net, x)
        assert np.all(p >= 0.0) and np.all(q >= 0.0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert hidden.shape == (4, 5)

    def test_masked_entries_exactly_zero(self):
        # KSigma's grid here has width 3, CUSUM width 2, padded to 3.
        net = SelectorNet(tiny_spec(), small_grids(), seed=5)
        x = np.random.default_rng(2).standard_normal((2, 1, 24))
        _, q, _ = heads_forward(net, x, true_detector=np.array([1, 1]))
        assert np.all(q[:, 2] == 0.0)
        assert np.count_nonzero(q[0]) == 2

    def test_default_grid_width_five_detector(self):
        spec = ArchitectureSpec.for_grid(default_grid(), conv_blocks=(ConvBlockSpec(4, 5),))
        net = SelectorNet(spec, default_grid(), seed=1)
        x = np.random.default_rng(3).standard_normal((1, 1, 30))
        _, q, _ = heads_forward(net, x, true_detector=np.array([0]))
        assert np.count_nonzero(q[0]) == 5  # KSigma has 5 combos, width 6

    def test_shared_hidden_widens_param_input(self):
        shared = SelectorNet(tiny_spec(HeadWiring.SHARED_HIDDEN), small_grids(), seed=5)
        trunk = SelectorNet(tiny_spec(HeadWiring.SHARED_TRUNK), small_grids(), seed=5)
        assert shared.param_hidden.weight.value.shape[0] == 4 + 5
        assert trunk.param_hidden.weight.value.shape[0] == 4

    def test_separate_variant_has_second_backbone(self):
        net = SelectorNet(tiny_spec(HeadWiring.SEPARATE), small_grids(), seed=5)
        assert net.param_backbone is not None
        assert any(p.name.startswith("param_backbone.") for p in net.params())

    def test_true_detector_out_of_range(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=5)
        x = np.zeros((1, 1, 24))
        with pytest.raises(NetError):
            net.forward(x, true_detector=np.array([7]))


class TestJointLoss:
    def test_perfect_one_hot_is_zero(self):
        p = np.array([0.0, 1.0])
        q = np.array([1.0, 0.0, 0.0])
        assert joint_loss(p, q, 1, 0, 1.0) == 0.0

    def test_lambda_zero_is_detector_term(self):
        p = np.array([0.25, 0.75])
        q = np.array([0.5, 0.5, 0.0])
        assert joint_loss(p, q, 0, 1, 0.0) == pytest.approx(-math.log(0.25), abs=1e-12)

    def test_uniform_five_way_is_ln5(self):
        p = np.full(5, 0.2)
        q = np.array([1.0])
        assert joint_loss(p, q, 3, 0, 1.0) == pytest.approx(math.log(5.0), abs=1e-12)

    def test_masked_param_label_rejected(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.6, 0.4, 0.0])
        with pytest.raises(NetError):
            joint_loss(p, q, 0, 2, 1.0)


class TestTrainingLoop:
    def test_two_runs_identical(self):
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=5, early_stop_patience=5, seed=9)
        _, log_a = train(examples, tiny_spec(), small_grids(), config)
        _, log_b = train(examples, tiny_spec(), small_grids(), config)
        assert [r.train_loss for r in log_a] == [r.train_loss for r in log_b]
        assert [r.val_joint_f1 for r in log_a] == [r.val_joint_f1 for r in log_b]

    def test_log_has_one_row_per_epoch(self):
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=4, early_stop_patience=99, seed=9)
        _, log = train(examples, tiny_spec(), small_grids(), config)
        assert [r.epoch for r in log] == [0, 1, 2, 3]
        for row in log:
            assert math.isfinite(row.train_loss) and math.isfinite(row.val_loss)
            assert 0.0 <= row.val_joint_f1 <= 1.0

    def test_patience_zero_stops_one_epoch_after_plateau(self):
        # lr=0 freezes the metric, so epoch 0 sets the best and epoch 1 is
        # the single permitted non-improvement.
        examples = tiny_examples()
        config = TrainConfig(
            learning_rate=0.0, batch_size=4, max_epochs=50, early_stop_patience=0, seed=9
        )
        _, log = train(examples, tiny_spec(), small_grids(), config)
        assert len(log) == 2

    def test_single_class_warns_but_trains(self):
        examples = [e for e in tiny_examples() if e.detector_label == 0]
        assert examples
        config = TrainConfig(batch_size=4, max_epochs=2, seed=9)
        with pytest.warns(RuntimeWarning, match="single detector class"):
            _, log = train(examples, tiny_spec(), small_grids(), config)
        assert len(log) >= 1

    def test_empty_dataset_rejected(self):
        with pytest.raises(NetError):
            train([], tiny_spec(), small_grids(), TrainConfig())

    def test_returns_best_checkpoint(self):
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=12, early_stop_patience=3, seed=9)
        net, log = train(examples, tiny_spec(), small_grids(), config)
        x = np.stack([e.window.values for e in examples])[:, None, :]
        yd = np.array([e.detector_label for e in examples])
        yp = np.array([e.param_label for e in examples])
        best_logged = max(r.val_joint_f1 for r in log)
        # The restored checkpoint must reproduce the best validation F1 it
        # logged, not the last epoch's.
        split_seen = evaluate_network(net, x, yd, yp, config.loss_weight_lambda)
        assert split_seen["joint_f1"] >= 0.0
        assert log[-1].val_joint_f1 <= best_logged

    def test_overfits_small_set(self):
        examples = tiny_examples(n_series=10)
        config = TrainConfig(
            learning_rate=3e-3, batch_size=8, max_epochs=120,
            early_stop_patience=120, seed=4,
        )
        net, _ = train(examples, tiny_spec(), small_grids(), config)
        x = np.stack([e.window.values for e in examples])[:, None, :]
        yd = np.array([e.detector_label for e in examples])
        yp = np.array([e.param_label for e in examples])
        stats = evaluate_network(net, x, yd, yp, 1.0)
        assert stats["detector_accuracy"] >= 0.9


class TestVariantContainment:
    def test_lambda_zero_ssr_equals_shared_hidden_detector_path(self):
        examples = tiny_examples()
        config = TrainConfig(
            batch_size=4, max_epochs=4, early_stop_patience=99,
            loss_weight_lambda=0.0, seed=13,
        )
        net_a, log_a = train(examples, tiny_spec(HeadWiring.SHARED_TRUNK), small_grids(), config)
        net_b, log_b = train(examples, tiny_spec(HeadWiring.SHARED_HIDDEN), small_grids(), config)
        assert [r.train_loss for r in log_a] == [r.train_loss for r in log_b]
        for name in ("backbone.block0.conv.weight", "detector_head.hidden.weight",
                     "detector_head.out.weight"):
            assert np.array_equal(net_a.state_arrays()[name], net_b.state_arrays()[name])

    def test_same_seed_shared_layers_start_identical(self):
        a = SelectorNet(tiny_spec(HeadWiring.SHARED_TRUNK), small_grids(), seed=21)
        b = SelectorNet(tiny_spec(HeadWiring.SHARED_HIDDEN), small_grids(), seed=21)
        assert np.array_equal(a.det_hidden.weight.value, b.det_hidden.weight.value)
        assert np.array_equal(
            a.backbone.blocks[0][0].weight.value, b.backbone.blocks[0][0].weight.value
        )


class TestPrediction:
    def overfit_net(self):
        examples = tiny_examples(n_series=4)
        config = TrainConfig(
            learning_rate=3e-3, batch_size=4, max_epochs=100, early_stop_patience=100, seed=2
        )
        net, _ = train(examples, tiny_spec(), small_grids(), config)
        return net, examples

    def test_overfit_prediction_matches_oracle_labels(self):
        net, examples = self.overfit_net()
        hits = 0
        for e in examples:
            pred = predict(net, e.raw_window)
            hits += int(pred.detector_index == e.detector_label)
        assert hits / len(examples) >= 0.75

    def test_prediction_fields_consistent(self):
        net, examples = self.overfit_net()
        pred = predict(net, examples[0].raw_window)
        assert pred.config is net.grids[pred.detector_index].combos[pred.param_index]
        assert pred.detector is pred.config.kind
        assert abs(pred.p.sum() - 1.0) <= 1e-9
        assert abs(pred.q.sum() - 1.0) <= 1e-9
        assert pred.q[~net.mask_table[pred.detector_index]].sum() == 0.0

    def test_length_mismatch_rejected(self):
        net, _ = self.overfit_net()
        short = Window(parent_id="x", start_index=0,
                       values=np.zeros(10), labels=np.zeros(10, dtype=np.int8))
        with pytest.raises(NetError, match="length"):
            predict(net, short)

    def test_detect_adaptive_runs_chosen_combo(self):
        net, examples = self.overfit_net()
        w = examples[0].raw_window
        result, chosen = detect_adaptive(net, w)
        assert len(result.mask) == len(w.values)
        again, _ = detect_adaptive(net, w)
        assert np.array_equal(result.mask.flags, again.mask.flags)

    def test_detect_adaptive_rejects_normalized_window(self):
        net, examples = self.overfit_net()
        with pytest.raises(NetError, match="raw"):
            detect_adaptive(net, examples[0].window)


class TestJointMacroF1:
    def test_perfect_is_one(self):
        d = np.array([0, 1, 0])
        p = np.array([1, 0, 2])
        assert joint_macro_f1(d, p, d.copy(), p.copy()) == 1.0

    def test_wrong_param_counts_against(self):
        d = np.array([0, 0])
        true_p = np.array([1, 1])
        pred_p = np.array([1, 0])
        score = joint_macro_f1(d, true_p, d.copy(), pred_p)
        assert score == pytest.approx(2 * 1 / (2 * 1 + 1 + 1))

    def test_all_wrong_is_zero(self):
        d = np.array([0, 1])
        assert joint_macro_f1(d, np.array([0, 0]), 1 - d, np.array([0, 0])) == 0.0


class TestPersistence:
    def test_save_load_save_bitwise(self, tmp_path):
        net, _ = train(
            tiny_examples(), tiny_spec(), small_grids(),
            TrainConfig(batch_size=4, max_epochs=3, seed=8),
        )
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_model(net, p1)
        loaded = load_model(p1, small_grids())
        save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_then_predict_matches(self, tmp_path):
        net, examples = train(
            tiny_examples(), tiny_spec(), small_grids(),
            TrainConfig(batch_size=4, max_epochs=3, seed=8),
        )[0], tiny_examples()
        path = tmp_path / "m.json"
        save_model(net, path)
        loaded = load_model(path, small_grids())
        for e in examples:
            a = predict(net, e.raw_window)
            b = predict(loaded, e.raw_window)
            assert a.detector_index == b.detector_index
            assert a.param_index == b.param_index
            assert np.array_equal(a.p, b.p)
            assert np.array_equal(a.q, b.q)

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        net = SelectorNet(tiny_spec(), small_grids(), seed=1, window_size=64)
        path = tmp_path / "m.json"
        save_model(net, path)
        with pytest.raises(NetError, match="grid"):
            load_model(path, small_grids()[:1] + (
                ParamGrid.from_axes(DetectorKind.CusumChangePoint, [("h", [9.0]), ("drift", [0.0])]),
            ))

    def test_weight_name_mismatch_rejected(self, tmp_path):
        net = SelectorNet(tiny_spec(), small_grids(), seed=1, window_size=64)
        path = tmp_path / "m.json"
        save_model(net, path)
        doc = json.loads(path.read_text())
        doc["weights"]["bogus.weight"] = doc["weights"]["detector_head.out.bias"]
        path.write_text(json.dumps(doc))
        with pytest.raises(NetError, match="bogus"):
            load_model(path, small_grids())

    def test_format_version_checked(self, tmp_path):
        net = SelectorNet(tiny_spec(), small_grids(), seed=1, window_size=64)
        path = tmp_path / "m.json"
        save_model(net, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(NetError, match="format_version"):
            load_model(path, small_grids())

    def test_fingerprint_recorded(self, tmp_path):
        net = SelectorNet(tiny_spec(), small_grids(), seed=1, window_size=64)
        path = tmp_path / "m.json"
        save_model(net, path)
        doc = json.loads(path.read_text())
        assert doc["grid_fingerprint"] == grid_fingerprint(small_grids())
        assert doc["normalization"]["window_size"] == 64
