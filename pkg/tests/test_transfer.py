"""Pretraining, transplant, and freeze-schedule behavior."""

import numpy as np
import pytest

from adsel.data import make_classification_source
from adsel.net import SelectorNet, TrainConfig, fcn_forward, train
from adsel.nn import Adam
from adsel.transfer import (
    TransferError,
    adapt_length,
    load_backbone,
    pretrain_accuracy,
    pretrain_backbone,
    save_backbone,
    train_with_transfer,
    transplant,
)

from test_net import tiny_examples
from test_nn_gradients import small_grids, tiny_spec

WINDOW = 64


def shape_source(n=12, seed=3):
    return make_classification_source(n, 96, seed=seed, classes=("sine", "square"))


def pretrain_config(epochs=30, seed=1):
    return TrainConfig(
        learning_rate=3e-3, batch_size=8, max_epochs=epochs, seed=seed
    )


class TestAdaptLength:
    def test_same_length_is_copy(self):
        v = np.array([1.0, 2.0, 3.0])
        out = adapt_length(v, 3)
        assert np.array_equal(out, v)
        assert out is not v

    def test_linear_ramp_resamples_exactly(self):
        v = np.linspace(0.0, 1.0, 11)
        out = adapt_length(v, 21)
        assert np.allclose(out, np.linspace(0.0, 1.0, 21), atol=1e-12)

    def test_downsampling_keeps_endpoints(self):
        v = np.sin(np.linspace(0, 6, 100))
        out = adapt_length(v, 40)
        assert out[0] == v[0]
        assert out[-1] == v[-1]
        assert len(out) == 40

    def test_too_short_rejected(self):
        with pytest.raises(TransferError):
            adapt_length(np.array([1.0]), 10)


class TestPretrainBackbone:
    def test_separable_source_learns(self):
        source = shape_source()
        weights = pretrain_backbone(source, tiny_spec(), pretrain_config(), WINDOW)
        acc = pretrain_accuracy(weights, tiny_spec(), source, WINDOW, pretrain_config())
        assert acc >= 0.95

    def test_returns_backbone_names_only(self):
        weights = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        assert weights
        assert all(name.startswith("backbone.") for name in weights)
        assert "backbone.block0.bn.running_mean" in weights
        assert not any("pretrain_head" in name for name in weights)

    def test_deterministic(self):
        a = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        b = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        assert set(a) == set(b)
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_single_class_rejected(self):
        rows = [(1, np.sin(np.linspace(0, 5, 50))) for _ in range(4)]
        with pytest.raises(TransferError, match="2 source classes"):
            pretrain_backbone(rows, tiny_spec(), pretrain_config(1), WINDOW)

    def test_empty_rejected(self):
        with pytest.raises(TransferError):
            pretrain_backbone([], tiny_spec(), pretrain_config(1), WINDOW)


class TestTransplant:
    def pretrained(self):
        return pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)

    def test_copies_bitwise_and_keeps_head_init(self):
        weights = self.pretrained()
        net = SelectorNet(tiny_spec(), small_grids(), seed=77)
        head_before = net.det_hidden.weight.value.copy()
        transplant(weights, net)
        for name, arr in net.state_arrays().items():
            if name.startswith("backbone."):
                assert np.array_equal(arr, weights[name]), name
        assert np.array_equal(net.det_hidden.weight.value, head_before)

    def test_forward_identity_across_targets(self):
        weights = self.pretrained()
        net_a = SelectorNet(tiny_spec(), small_grids(), seed=1)
        net_b = SelectorNet(tiny_spec(), small_grids(), seed=2)
        transplant(weights, net_a)
        transplant(weights, net_b)
        x = np.random.default_rng(5).standard_normal((3, 1, WINDOW))
        assert np.array_equal(fcn_forward(net_a, x), fcn_forward(net_b, x))

    def test_freeze_blocks_backbone_updates(self):
        weights = self.pretrained()
        net = SelectorNet(tiny_spec(), small_grids(), seed=77)
        transplant(weights, net, freeze=True)
        head_before = net.det_out.weight.value.copy()
        optimizer = Adam(net.params(), learning_rate=1e-2)
        x = np.random.default_rng(6).standard_normal((4, 1, WINDOW))
        for _ in range(2):
            optimizer.zero_grad()
            net.loss_and_grad(
                x, np.array([0, 1, 0, 1]), np.array([0, 1, 2, 1]), 1.0,
                update_running=False,
            )
            optimizer.step()
        for name, arr in net.state_arrays().items():
            if name.startswith("backbone."):
                assert np.array_equal(arr, weights[name]), name
        assert not np.array_equal(net.det_out.weight.value, head_before)

    def test_shape_mismatch_names_offender(self):
        weights = self.pretrained()
        weights["backbone.block0.conv.weight"] = np.zeros((2, 1, 5))
        net = SelectorNet(tiny_spec(), small_grids(), seed=0)
        with pytest.raises(TransferError, match="backbone.block0.conv.weight"):
            transplant(weights, net)

    def test_name_mismatch_rejected(self):
        weights = self.pretrained()
        del weights["backbone.block1.conv.bias"]
        net = SelectorNet(tiny_spec(), small_grids(), seed=0)
        with pytest.raises(TransferError, match="block1.conv.bias"):
            transplant(weights, net)


class TestTrainWithTransfer:
    def test_always_frozen_backbone_never_moves(self):
        weights = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=4, early_stop_patience=99, seed=3)
        net, log = train_with_transfer(
            examples, tiny_spec(), small_grids(), config, weights, freeze="always"
        )
        assert len(log) == 4
        for name, arr in net.state_arrays().items():
            if name.startswith("backbone.") and "running" not in name:
                assert np.array_equal(arr, weights[name]), name

    def test_schedule_marks_backbone_trainable_again(self):
        weights = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=6, early_stop_patience=99, seed=3)
        net, log = train_with_transfer(
            examples, tiny_spec(), small_grids(), config, weights,
            freeze="schedule", unfreeze_epoch=2,
        )
        assert len(log) == 6
        assert all(p.trainable for p in net.params())

    def test_unfrozen_from_start_moves_backbone(self):
        # The restored best checkpoint may predate an unfreeze, so movement
        # is only guaranteed when the release happens at epoch 0.
        weights = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        examples = tiny_examples()
        config = TrainConfig(batch_size=4, max_epochs=4, early_stop_patience=99, seed=3)
        net, _ = train_with_transfer(
            examples, tiny_spec(), small_grids(), config, weights,
            freeze="schedule", unfreeze_epoch=0,
        )
        moved = [
            name
            for name, arr in net.state_arrays().items()
            if name.startswith("backbone.")
            and "running" not in name
            and not np.array_equal(arr, weights[name])
        ]
        assert moved

    def test_unknown_freeze_mode_rejected(self):
        with pytest.raises(TransferError, match="freeze"):
            train_with_transfer(
                tiny_examples(), tiny_spec(), small_grids(), TrainConfig(),
                {}, freeze="sometimes",
            )


class TestBackbonePersistence:
    def test_round_trip(self, tmp_path):
        weights = pretrain_backbone(shape_source(4), tiny_spec(), pretrain_config(5), WINDOW)
        path = tmp_path / "bb.json"
        save_backbone(weights, path)
        back = load_backbone(path)
        assert set(back) == set(weights)
        for name in weights:
            assert np.array_equal(back[name], weights[name])

    def test_marker_enforced(self, tmp_path):
        path = tmp_path / "bb.json"
        path.write_text('{"format_version": 1, "weights": {}}')
        with pytest.raises(TransferError, match="backbone-only"):
            load_backbone(path)
