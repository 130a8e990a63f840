"""Analytic-vs-numeric gradient checks for every layer and the full net.

Central differences with step 1e-5 against float64 analytic passes;
tolerance 1e-4 relative throughout. Projections onto a fixed random
direction turn tensor outputs into scalars.
"""

import numpy as np
import pytest

from adsel.detectors import DetectorKind, ParamGrid
from adsel.net import (
    ArchitectureSpec,
    ConvBlockSpec,
    HeadWiring,
    NetError,
    SelectorNet,
)
from adsel.nn import (
    Adam,
    BatchNorm1d,
    Conv1dSame,
    Dense,
    GlobalAvgPool,
    NNError,
    Relu,
    cross_entropy,
    finite_difference_gradient,
    masked_log_softmax,
    relative_error,
    softmax,
)

TOL = 1e-4
STEP = 1e-5
REPS = 10


def small_grids():
    return (
        ParamGrid.from_axes(DetectorKind.KSigma, [("k", [2.0, 3.0, 4.0])]),
        ParamGrid.from_axes(
            DetectorKind.CusumChangePoint, [("h", [4.0]), ("drift", [0.0, 0.5])]
        ),
    )


def tiny_spec(variant=HeadWiring.SHARED_HIDDEN):
    return ArchitectureSpec(
        conv_blocks=(ConvBlockSpec(3, 8), ConvBlockSpec(4, 3)),
        detector_head_hidden=5,
        param_head_hidden=4,
        num_detectors=2,
        max_param_width=3,
        variant=variant,
    )


class TestConvGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_weight_bias_input(self, rep):
        rng = np.random.default_rng(100 + rep)
        kernel = (8, 5, 3, 2, 1)[rep % 5]
        conv = Conv1dSame("c", 3, 4, kernel, rng)
        x = rng.standard_normal((2, 3, 11))
        direction = rng.standard_normal((2, 4, 11))

        def loss():
            return float((conv.forward(x) * direction).sum())

        loss()
        gx = conv.backward(direction)
        for analytic, arr in (
            (conv.weight.grad, conv.weight.value),
            (conv.bias.grad, conv.bias.value),
            (gx, x),
        ):
            numeric = finite_difference_gradient(loss, arr, STEP)
            assert relative_error(analytic, numeric) < TOL


class TestBatchNormGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_train_mode(self, rep):
        rng = np.random.default_rng(200 + rep)
        bn = BatchNorm1d("b", 3)
        bn.gamma.value[:] = rng.uniform(0.5, 2.0, 3)
        bn.beta.value[:] = rng.standard_normal(3)
        x = rng.standard_normal((2, 3, 7)) * 2.0
        direction = rng.standard_normal((2, 3, 7))

        def loss():
            return float((bn.forward(x, train=True, update_running=False) * direction).sum())

        loss()
        gx = bn.backward(direction)
        for analytic, arr in (
            (bn.gamma.grad, bn.gamma.value),
            (bn.beta.grad, bn.beta.value),
            (gx, x),
        ):
            numeric = finite_difference_gradient(loss, arr, STEP)
            assert relative_error(analytic, numeric) < TOL

    def test_eval_mode_is_affine(self):
        rng = np.random.default_rng(7)
        bn = BatchNorm1d("b", 2)
        bn.running_mean[:] = [0.5, -1.0]
        bn.running_var[:] = [2.0, 0.25]
        x = rng.standard_normal((3, 2, 5))
        out = bn.forward(x, train=False)
        scale = 1.0 / np.sqrt(bn.running_var + bn.eps)
        expected = (x - bn.running_mean[None, :, None]) * scale[None, :, None]
        assert np.allclose(out, expected, atol=1e-12)
        direction = rng.standard_normal(out.shape)
        gx = bn.backward(direction)
        assert np.allclose(gx, direction * scale[None, :, None], atol=1e-12)

    def test_train_eval_agree_when_stats_match(self):
        rng = np.random.default_rng(8)
        bn = BatchNorm1d("b", 2)
        x = rng.standard_normal((4, 2, 6))
        bn.running_mean[:] = x.mean(axis=(0, 2))
        bn.running_var[:] = x.var(axis=(0, 2))
        train_out = bn.forward(x, train=True, update_running=False)
        eval_out = bn.forward(x, train=False)
        assert np.allclose(train_out, eval_out, atol=1e-12)


class TestReluGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_input(self, rep):
        rng = np.random.default_rng(300 + rep)
        relu = Relu()
        # Keep activations away from the kink so the central difference
        # stays two-sided.
        x = rng.standard_normal((3, 5))
        x[np.abs(x) < 0.05] = 0.1
        direction = rng.standard_normal((3, 5))

        def loss():
            return float((relu.forward(x) * direction).sum())

        loss()
        gx = relu.backward(direction)
        numeric = finite_difference_gradient(loss, x, STEP)
        assert relative_error(gx, numeric) < TOL


class TestGapGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_input(self, rep):
        rng = np.random.default_rng(400 + rep)
        pool = GlobalAvgPool()
        x = rng.standard_normal((2, 3, 9))
        direction = rng.standard_normal((2, 3))

        def loss():
            return float((pool.forward(x) * direction).sum())

        loss()
        gx = pool.backward(direction)
        numeric = finite_difference_gradient(loss, x, STEP)
        assert relative_error(gx, numeric) < TOL

    def test_constant_input_pools_to_itself(self):
        x = np.full((2, 3, 10), 0.0)
        x[0, :, :] = np.array([1.5, -2.0, 0.25])[:, None]
        out = GlobalAvgPool().forward(x)
        assert np.allclose(out[0], [1.5, -2.0, 0.25], atol=0)


class TestDenseGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_weight_bias_input(self, rep):
        rng = np.random.default_rng(500 + rep)
        dense = Dense("d", 6, 4, rng)
        x = rng.standard_normal((3, 6))
        direction = rng.standard_normal((3, 4))

        def loss():
            return float((dense.forward(x) * direction).sum())

        loss()
        gx = dense.backward(direction)
        for analytic, arr in (
            (dense.weight.grad, dense.weight.value),
            (dense.bias.grad, dense.bias.value),
            (gx, x),
        ):
            numeric = finite_difference_gradient(loss, arr, STEP)
            assert relative_error(analytic, numeric) < TOL


class TestSoftmaxCrossEntropyGradients:
    @pytest.mark.parametrize("rep", range(REPS))
    def test_unmasked(self, rep):
        rng = np.random.default_rng(600 + rep)
        logits = rng.standard_normal((3, 5)) * 2.0
        labels = rng.integers(0, 5, size=3)

        def loss():
            return cross_entropy(logits, labels)[0]

        analytic = cross_entropy(logits, labels)[1]
        numeric = finite_difference_gradient(loss, logits, STEP)
        assert relative_error(analytic, numeric) < TOL

    @pytest.mark.parametrize("rep", range(REPS))
    def test_masked(self, rep):
        rng = np.random.default_rng(700 + rep)
        logits = rng.standard_normal((4, 6))
        mask = np.ones((4, 6), dtype=bool)
        mask[0, 3:] = False
        mask[1, 5:] = False
        mask[2, 2:] = False
        labels = np.array([1, 4, 0, 5])

        def loss():
            return cross_entropy(logits, labels, mask=mask)[0]

        analytic = cross_entropy(logits, labels, mask=mask)[1]
        numeric = finite_difference_gradient(loss, logits, STEP)
        assert relative_error(analytic, numeric) < TOL
        assert np.all(analytic[~mask] == 0.0)

    def test_weighted_samples(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((3, 4))
        labels = np.array([0, 1, 2])
        weights = np.array([2.0, 0.5, 1.0])

        def loss():
            return cross_entropy(logits, labels, sample_weights=weights)[0]

        analytic = cross_entropy(logits, labels, sample_weights=weights)[1]
        numeric = finite_difference_gradient(loss, logits, STEP)
        assert relative_error(analytic, numeric) < TOL

    def test_label_outside_mask_rejected(self):
        logits = np.zeros((1, 3))
        mask = np.array([[True, True, False]])
        with pytest.raises(NNError, match="mask"):
            cross_entropy(logits, np.array([2]), mask=mask)

    def test_fully_masked_row_rejected(self):
        with pytest.raises(NNError):
            masked_log_softmax(np.zeros((1, 3)), np.zeros((1, 3), dtype=bool))

    def test_masked_probabilities_exactly_zero(self):
        mask = np.array([[True, False, True, False]])
        probs = softmax(np.array([[5.0, 9.0, 3.0, 9.0]]), mask)
        assert probs[0, 1] == 0.0 and probs[0, 3] == 0.0
        assert abs(probs.sum() - 1.0) <= 1e-9


class TestFullNetworkGradients:
    @pytest.mark.parametrize(
        "variant",
        [HeadWiring.SEPARATE, HeadWiring.SHARED_TRUNK, HeadWiring.SHARED_HIDDEN],
    )
    def test_every_parameter(self, variant):
        rng = np.random.default_rng(42)
        net = SelectorNet(tiny_spec(variant), small_grids(), seed=11)
        x = rng.standard_normal((2, 1, 16))
        yd = np.array([0, 1])
        yp = np.array([2, 1])
        lam = 0.7

        def loss():
            return net.loss_and_grad(x, yd, yp, lam, update_running=False)[0]

        for p in net.params():
            p.grad[...] = 0.0
        loss()
        analytic = {p.name: p.grad.copy() for p in net.params()}
        for p in net.params():
            numeric = finite_difference_gradient(loss, p.value, STEP)
            assert relative_error(analytic[p.name], numeric) < TOL, p.name


class TestOptimizerContract:
    def test_zero_learning_rate_leaves_weights_bitwise(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=3)
        before = {p.name: p.value.copy() for p in net.params()}
        opt = Adam(net.params(), learning_rate=0.0)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 1, 16))
        opt.zero_grad()
        net.loss_and_grad(x, np.array([0, 1]), np.array([0, 1]), 1.0, update_running=False)
        opt.step()
        for p in net.params():
            assert np.array_equal(before[p.name], p.value)

    def test_frozen_params_do_not_move(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=3)
        for p in net.backbone_params():
            p.trainable = False
        frozen_before = {p.name: p.value.copy() for p in net.backbone_params()}
        head_before = {p.name: p.value.copy() for p in net.det_out.params()}
        opt = Adam(net.params(), learning_rate=1e-2)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 1, 16))
        for _ in range(3):
            opt.zero_grad()
            net.loss_and_grad(x, np.array([0, 1, 0, 1]), np.array([0, 1, 2, 1]), 1.0)
            opt.step()
        for p in net.backbone_params():
            assert np.array_equal(frozen_before[p.name], p.value)
        assert any(
            not np.array_equal(head_before[p.name], p.value) for p in net.det_out.params()
        )

    def test_non_finite_loss_aborts(self):
        net = SelectorNet(tiny_spec(), small_grids(), seed=3)
        x = np.full((1, 1, 16), 1e300)
        with pytest.raises((NetError, NNError, FloatingPointError)):
            with np.errstate(over="raise"):
                net.loss_and_grad(x, np.array([0]), np.array([0]), 1.0)
