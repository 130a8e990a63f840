"""Two-head selector network: which detector, and at which grid combo.

A convolutional backbone pools each normalized window into a feature
vector; a detector head classifies over detector kinds and a parameter
head classifies over that detector's grid combos through a fixed-width
masked output. Three wirings are supported, named by how much the heads
share:

  "NS"      two fully independent networks, one per head
  "SSR"     both heads read the same backbone features
  "ATSDLN"  as SSR, plus the detector head's hidden activation is
            concatenated onto the parameter head's input (the default)

The parameter head is teacher-forced: its mask follows the true detector
label during training and the predicted detector at inference.
"""

from __future__ import annotations

import copy
import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Window, normalize_window
from .detectors import (
    DetectionResult,
    DetectorConfig,
    DetectorKind,
    ParamGrid,
    grid_fingerprint,
    run_detector,
)
from .nn import (
    Adam,
    BatchNorm1d,
    Conv1dSame,
    Dense,
    GlobalAvgPool,
    NNError,
    Param,
    Relu,
    cross_entropy,
    softmax,
)
from .oracle import SupervisedExample

__all__ = [
    "NetError",
    "HeadWiring",
    "ConvBlockSpec",
    "ArchitectureSpec",
    "TrainConfig",
    "EpochStats",
    "SelectorNet",
    "Prediction",
    "fcn_forward",
    "heads_forward",
    "joint_loss",
    "backward_and_step",
    "train",
    "evaluate_network",
    "joint_macro_f1",
    "predict",
    "detect_adaptive",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1


class NetError(ValueError):
    pass


class HeadWiring(enum.Enum):
    """How much the two heads share, least to most."""

    SEPARATE = "NS"
    SHARED_TRUNK = "SSR"
    SHARED_HIDDEN = "ATSDLN"

    @classmethod
    def parse(cls, token: "str | HeadWiring") -> "HeadWiring":
        if isinstance(token, cls):
            return token
        for member in cls:
            if member.value == token:
                return member
        raise NetError(
            f"unknown variant {token!r}; expected one of "
            f"{[m.value for m in cls]}"
        )


@dataclass(frozen=True)
class ConvBlockSpec:
    filters: int
    kernel_size: int

    def __post_init__(self) -> None:
        if self.filters < 1 or self.kernel_size < 1:
            raise NetError("conv block sizes must be positive")


# Standard time-series FCN shape, and a smaller profile that trains in
# seconds on a laptop-scale corpus.
FULL_BLOCKS = (ConvBlockSpec(128, 8), ConvBlockSpec(256, 5), ConvBlockSpec(128, 3))
DESK_BLOCKS = (ConvBlockSpec(32, 8), ConvBlockSpec(64, 5), ConvBlockSpec(32, 3))


@dataclass(frozen=True)
class ArchitectureSpec:
    """Everything needed to rebuild the network graph."""

    channels_in: int = 1
    conv_blocks: tuple[ConvBlockSpec, ...] = DESK_BLOCKS
    detector_head_hidden: int = 64
    param_head_hidden: int = 64
    num_detectors: int = 5
    max_param_width: int = 6
    variant: HeadWiring = HeadWiring.SHARED_HIDDEN

    def __post_init__(self) -> None:
        if not self.conv_blocks:
            raise NetError("conv_blocks must be nonempty")
        if self.channels_in < 1:
            raise NetError("channels_in must be positive")
        for n in (
            self.detector_head_hidden,
            self.param_head_hidden,
            self.num_detectors,
            self.max_param_width,
        ):
            if n < 1:
                raise NetError("head widths and class counts must be positive")
        object.__setattr__(self, "variant", HeadWiring.parse(self.variant))

    @classmethod
    def for_grid(
        cls,
        grids: Sequence[ParamGrid],
        variant: str | HeadWiring = HeadWiring.SHARED_HIDDEN,
        conv_blocks: tuple[ConvBlockSpec, ...] = DESK_BLOCKS,
        detector_head_hidden: int = 64,
        param_head_hidden: int = 64,
    ) -> "ArchitectureSpec":
        """Size the output layers from the grid actually in use."""
        return cls(
            conv_blocks=conv_blocks,
            detector_head_hidden=detector_head_hidden,
            param_head_hidden=param_head_hidden,
            num_detectors=len(grids),
            max_param_width=max(len(g.combos) for g in grids),
            variant=variant,
        )

    def to_json(self) -> dict:
        return {
            "channels_in": self.channels_in,
            "conv_blocks": [
                {"filters": b.filters, "kernel_size": b.kernel_size}
                for b in self.conv_blocks
            ],
            "detector_head_hidden": self.detector_head_hidden,
            "param_head_hidden": self.param_head_hidden,
            "num_detectors": self.num_detectors,
            "max_param_width": self.max_param_width,
            "variant": self.variant.value,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ArchitectureSpec":
        return cls(
            channels_in=doc["channels_in"],
            conv_blocks=tuple(
                ConvBlockSpec(b["filters"], b["kernel_size"]) for b in doc["conv_blocks"]
            ),
            detector_head_hidden=doc["detector_head_hidden"],
            param_head_hidden=doc["param_head_hidden"],
            num_detectors=doc["num_detectors"],
            max_param_width=doc["max_param_width"],
            variant=doc["variant"],
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    loss_weight_lambda: float = 1.0
    seed: int = 0
    # Optional per-detector-class loss weights (e.g. inverse frequency);
    # None means uniform.
    detector_class_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise NetError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise NetError("batch_size and max_epochs must be positive")
        if self.early_stop_patience < 0:
            raise NetError("early_stop_patience must be >= 0")
        if self.loss_weight_lambda < 0:
            raise NetError("loss_weight_lambda must be >= 0")
        if self.detector_class_weights is not None and any(
            w < 0 for w in self.detector_class_weights
        ):
            raise NetError("detector_class_weights must be nonnegative")


class _Backbone:
    """conv -> batchnorm -> rectifier blocks, then global average pooling."""

    def __init__(self, prefix: str, spec: ArchitectureSpec, rng: np.random.Generator):
        self.blocks: list[tuple[Conv1dSame, BatchNorm1d, Relu]] = []
        channels = spec.channels_in
        for i, blk in enumerate(spec.conv_blocks):
            conv = Conv1dSame(
                f"{prefix}.block{i}.conv", channels, blk.filters, blk.kernel_size, rng
            )
            bn = BatchNorm1d(f"{prefix}.block{i}.bn", blk.filters)
            self.blocks.append((conv, bn, Relu()))
            channels = blk.filters
        self.pool = GlobalAvgPool()
        self.feature_width = channels

    def forward(self, x: np.ndarray, train: bool, update_running: bool = True) -> np.ndarray:
        h = x
        for conv, bn, relu in self.blocks:
            h = relu.forward(bn.forward(conv.forward(h), train, update_running))
        return self.pool.forward(h)

    def backward(self, gfeatures: np.ndarray) -> np.ndarray:
        g = self.pool.backward(gfeatures)
        for conv, bn, relu in reversed(self.blocks):
            g = conv.backward(bn.backward(relu.backward(g)))
        return g

    def params(self) -> list[Param]:
        out: list[Param] = []
        for conv, bn, _ in self.blocks:
            out += conv.params() + bn.params()
        return out

    def state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for _, bn, _ in self.blocks:
            out.update(bn.state())
        return out


@dataclass
class _ForwardState:
    features: np.ndarray
    detector_hidden: np.ndarray
    detector_logits: np.ndarray
    param_logits: np.ndarray
    mask: np.ndarray
    selected: np.ndarray


class SelectorNet:
    """The live network: layers, grid binding, and (de)serializable state.

    Parameter tensors are created in a fixed order from a single seeded
    generator (shared backbone, detector head, parameter head, then the
    separate-wiring second backbone), so two variants with the same seed
    start from identical shared weights.
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        grids: Sequence[ParamGrid],
        seed: int = 0,
        window_size: int | None = None,
    ):
        if len(grids) != spec.num_detectors:
            raise NetError(
                f"spec expects {spec.num_detectors} detectors, grid has {len(grids)}"
            )
        widths = [len(g.combos) for g in grids]
        if max(widths) != spec.max_param_width:
            raise NetError(
                f"spec max_param_width {spec.max_param_width} != grid max {max(widths)}"
            )
        self.spec = spec
        self.grids = tuple(grids)
        self.window_size = window_size
        rng = np.random.default_rng(seed)

        self.backbone = _Backbone("backbone", spec, rng)
        feat = self.backbone.feature_width
        self.det_hidden = Dense("detector_head.hidden", feat, spec.detector_head_hidden, rng)
        self.det_relu = Relu()
        self.det_out = Dense("detector_head.out", spec.detector_head_hidden, spec.num_detectors, rng)

        if spec.variant is HeadWiring.SHARED_HIDDEN:
            param_in = feat + spec.detector_head_hidden
        else:
            param_in = feat
        self.param_hidden = Dense("param_head.hidden", param_in, spec.param_head_hidden, rng)
        self.param_relu = Relu()
        self.param_out = Dense("param_head.out", spec.param_head_hidden, spec.max_param_width, rng)

        self.param_backbone: _Backbone | None = None
        if spec.variant is HeadWiring.SEPARATE:
            self.param_backbone = _Backbone("param_backbone", spec, rng)

        self.grid_widths = tuple(widths)
        self.mask_table = np.zeros((spec.num_detectors, spec.max_param_width), dtype=bool)
        for d, w in enumerate(widths):
            self.mask_table[d, :w] = True

    # -- parameter walking -------------------------------------------------

    def params(self) -> list[Param]:
        out = self.backbone.params()
        out += self.det_hidden.params() + self.det_out.params()
        out += self.param_hidden.params() + self.param_out.params()
        if self.param_backbone is not None:
            out += self.param_backbone.params()
        return out

    def backbone_params(self) -> list[Param]:
        out = self.backbone.params()
        if self.param_backbone is not None:
            out += self.param_backbone.params()
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays by name: weights plus batchnorm statistics."""
        out = {p.name: p.value for p in self.params()}
        out.update(self.backbone.state())
        if self.param_backbone is not None:
            out.update(self.param_backbone.state())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        live = self.state_arrays()
        if set(live) != set(snap):
            raise NetError("snapshot names do not match this network")
        for name, arr in live.items():
            arr[...] = snap[name]

    # -- forward / backward ------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        true_detector: np.ndarray | None = None,
        update_running: bool = True,
    ) -> _ForwardState:
        if x.ndim != 3 or x.shape[1] != self.spec.channels_in:
            raise NetError(f"expected (batch, {self.spec.channels_in}, length), got {x.shape}")
        features = self.backbone.forward(x, train, update_running)
        hidden = self.det_relu.forward(self.det_hidden.forward(features))
        det_logits = self.det_out.forward(hidden)

        if self.spec.variant is HeadWiring.SEPARATE:
            assert self.param_backbone is not None
            param_in = self.param_backbone.forward(x, train, update_running)
        elif self.spec.variant is HeadWiring.SHARED_TRUNK:
            param_in = features
        else:
            param_in = np.concatenate([features, hidden], axis=1)
        param_logits = self.param_out.forward(
            self.param_relu.forward(self.param_hidden.forward(param_in))
        )

        if true_detector is not None:
            selected = np.asarray(true_detector, dtype=np.int64)
            if selected.min() < 0 or selected.max() >= self.spec.num_detectors:
                raise NetError("true_detector index out of range")
        else:
            selected = det_logits.argmax(axis=1)
        return _ForwardState(
            features=features,
            detector_hidden=hidden,
            detector_logits=det_logits,
            param_logits=param_logits,
            mask=self.mask_table[selected],
            selected=selected,
        )

    def loss_and_grad(
        self,
        x: np.ndarray,
        detector_labels: np.ndarray,
        param_labels: np.ndarray,
        loss_weight_lambda: float,
        class_weights: np.ndarray | None = None,
        update_running: bool = True,
    ) -> tuple[float, float, float]:
        """One training forward/backward; gradients accumulate into params.

        Returns (joint, detector, parameter) loss terms. The parameter
        gradient is scaled by lambda BEFORE it touches any shared layer, so
        lambda=0 leaves the detector path's gradients bit-exact.
        """
        detector_labels = np.asarray(detector_labels, dtype=np.int64)
        param_labels = np.asarray(param_labels, dtype=np.int64)
        state = self.forward(x, train=True, true_detector=detector_labels, update_running=update_running)
        sample_weights = None
        if class_weights is not None:
            sample_weights = np.asarray(class_weights, dtype=np.float64)[detector_labels]
        det_loss, g_det = cross_entropy(
            state.detector_logits, detector_labels, sample_weights=sample_weights
        )
        param_loss, g_param = cross_entropy(state.param_logits, param_labels, mask=state.mask)
        total = det_loss + loss_weight_lambda * param_loss
        if not np.isfinite(total):
            raise NetError(
                f"non-finite loss (detector={det_loss}, parameter={param_loss}); "
                "check learning rate and input scaling"
            )

        g_param = g_param * loss_weight_lambda
        g_param_in = self.param_hidden.backward(
            self.param_relu.backward(self.param_out.backward(g_param))
        )
        g_hidden = self.det_out.backward(g_det)
        feat = self.backbone.feature_width
        if self.spec.variant is HeadWiring.SHARED_HIDDEN:
            g_hidden = g_hidden + g_param_in[:, feat:]
        g_features = self.det_hidden.backward(self.det_relu.backward(g_hidden))
        if self.spec.variant is HeadWiring.SHARED_TRUNK:
            g_features = g_features + g_param_in
        elif self.spec.variant is HeadWiring.SHARED_HIDDEN:
            g_features = g_features + g_param_in[:, :feat]
        self.backbone.backward(g_features)
        if self.spec.variant is HeadWiring.SEPARATE:
            assert self.param_backbone is not None
            self.param_backbone.backward(g_param_in)
        return total, det_loss, param_loss


# -- functional wrappers over a SelectorNet --------------------------------


def fcn_forward(net: SelectorNet, x: np.ndarray, train: bool = False) -> np.ndarray:
    """Backbone only: (batch, channels, length) -> pooled (batch, features)."""
    return net.backbone.forward(x, train)


def heads_forward(
    net: SelectorNet,
    x: np.ndarray,
    true_detector: np.ndarray | None = None,
    train: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full forward returning (p, q, detector_hidden).

    p is the detector softmax; q is the masked combo softmax, masked by
    the true detector when given (training) else by argmax p (inference).
    Masked entries of q are exactly zero.
    """
    state = net.forward(x, train=train, true_detector=true_detector, update_running=False)
    p = softmax(state.detector_logits)
    q = softmax(state.param_logits, state.mask)
    return p, q, state.detector_hidden


def joint_loss(
    p: np.ndarray,
    q: np.ndarray,
    detector_label: int,
    param_label: int,
    loss_weight_lambda: float,
) -> float:
    """Cross-entropy of both heads on one example, from probabilities."""
    if not (0 <= detector_label < p.shape[-1]):
        raise NetError("detector_label out of range")
    if q[..., param_label] <= 0.0:
        raise NetError("param_label has zero masked probability")
    with np.errstate(divide="ignore"):
        return float(
            -np.log(p[..., detector_label]) - loss_weight_lambda * np.log(q[..., param_label])
        )


def backward_and_step(
    net: SelectorNet,
    optimizer: Adam,
    x: np.ndarray,
    detector_labels: np.ndarray,
    param_labels: np.ndarray,
    config: TrainConfig,
) -> float:
    """One minibatch update; returns the batch joint loss."""
    optimizer.zero_grad()
    weights = None
    if config.detector_class_weights is not None:
        weights = np.asarray(config.detector_class_weights, dtype=np.float64)
    total, _, _ = net.loss_and_grad(
        x, detector_labels, param_labels, config.loss_weight_lambda, class_weights=weights
    )
    optimizer.step()
    return total


# -- training loop ---------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_detector_accuracy: float
    val_loss: float
    val_detector_accuracy: float
    val_joint_accuracy: float
    val_joint_f1: float


def _examples_to_arrays(
    examples: Sequence[SupervisedExample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.stack([e.window.values for e in examples]).astype(np.float64)[:, None, :]
    yd = np.array([e.detector_label for e in examples], dtype=np.int64)
    yp = np.array([e.param_label for e in examples], dtype=np.int64)
    return x, yd, yp


def _stratified_split(
    labels: np.ndarray, val_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction)) if len(idx) >= 2 else 0
        n_val = max(n_val, 1) if len(idx) >= 2 else 0
        val_idx += idx[:n_val].tolist()
        train_idx += idx[n_val:].tolist()
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(
        np.array(val_idx, dtype=np.int64)
    )


def joint_macro_f1(
    true_detector: np.ndarray,
    true_param: np.ndarray,
    pred_detector: np.ndarray,
    pred_param: np.ndarray,
) -> float:
    """Macro F1 over detector classes where a hit needs both heads right."""
    joint_ok = (true_detector == pred_detector) & (true_param == pred_param)
    classes = np.union1d(np.unique(true_detector), np.unique(pred_detector))
    scores = []
    for cls in classes:
        tp = int((joint_ok & (true_detector == cls)).sum())
        fp = int(((pred_detector == cls) & ~joint_ok).sum())
        fn = int(((true_detector == cls) & ~joint_ok).sum())
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def evaluate_network(
    net: SelectorNet,
    x: np.ndarray,
    detector_labels: np.ndarray,
    param_labels: np.ndarray,
    loss_weight_lambda: float,
) -> dict[str, float]:
    """Inference-mode metrics; loss is teacher-forced, accuracy is not."""
    state = net.forward(x, train=False, true_detector=detector_labels, update_running=False)
    det_loss, _ = cross_entropy(state.detector_logits, detector_labels)
    param_loss, _ = cross_entropy(state.param_logits, param_labels, mask=state.mask)
    pred_detector = state.detector_logits.argmax(axis=1)
    masked = np.where(net.mask_table[pred_detector], state.param_logits, -np.inf)
    pred_param = masked.argmax(axis=1)
    det_acc = float((pred_detector == detector_labels).mean())
    joint = (pred_detector == detector_labels) & (pred_param == param_labels)
    return {
        "loss": det_loss + loss_weight_lambda * param_loss,
        "detector_accuracy": det_acc,
        "joint_accuracy": float(joint.mean()),
        "joint_f1": joint_macro_f1(detector_labels, param_labels, pred_detector, pred_param),
    }


def train(
    examples: Sequence[SupervisedExample],
    spec: ArchitectureSpec,
    grids: Sequence[ParamGrid],
    config: TrainConfig,
    net: SelectorNet | None = None,
    unfreeze_epoch: int | None = None,
    val_fraction: float = 0.2,
) -> tuple[SelectorNet, list[EpochStats]]:
    """Train with a stratified split, early stopping on validation joint F1.

    Returns the best-validation checkpoint and the per-epoch log. Pass an
    existing net to continue training it (used for transfer); fresh nets
    are seeded from the config. `unfreeze_epoch` marks every parameter
    trainable again at the start of that epoch (0-based).
    """
    if not examples:
        raise NetError("cannot train on an empty dataset")
    x, yd, yp = _examples_to_arrays(examples)
    if net is None:
        net = SelectorNet(spec, grids, seed=config.seed, window_size=x.shape[2])
    if net.window_size is None:
        net.window_size = x.shape[2]
    if x.shape[2] != net.window_size:
        raise NetError(f"window length {x.shape[2]} != network's {net.window_size}")
    if len(np.unique(yd)) < 2:
        warnings.warn("training labels contain a single detector class", RuntimeWarning)

    split_rng = np.random.default_rng((config.seed, 0xA5))
    shuffle_rng = np.random.default_rng((config.seed, 0x5A))
    train_idx, val_idx = _stratified_split(yd, val_fraction, split_rng)
    if len(val_idx) == 0 or len(train_idx) == 0:
        # Too small to hold anything out; validate on the training set.
        train_idx = np.arange(len(examples))
        val_idx = train_idx
    xt, ydt, ypt = x[train_idx], yd[train_idx], yp[train_idx]
    xv, ydv, ypv = x[val_idx], yd[val_idx], yp[val_idx]

    optimizer = Adam(net.params(), learning_rate=config.learning_rate)
    weights = None
    if config.detector_class_weights is not None:
        weights = np.asarray(config.detector_class_weights, dtype=np.float64)

    log: list[EpochStats] = []
    best_f1 = -1.0
    best_snap = net.snapshot()
    bad_epochs = 0
    for epoch in range(config.max_epochs):
        if unfreeze_epoch is not None and epoch == unfreeze_epoch:
            for p in net.params():
                p.trainable = True
        order = shuffle_rng.permutation(len(xt))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            optimizer.zero_grad()
            total, _, _ = net.loss_and_grad(
                xt[batch], ydt[batch], ypt[batch],
                config.loss_weight_lambda, class_weights=weights,
            )
            optimizer.step()
            losses.append(total)
        val = evaluate_network(net, xv, ydv, ypv, config.loss_weight_lambda)
        # Post-update accuracy on the training fold; convergence-speed
        # comparisons (warm vs cold start) read this column.
        train_state = net.forward(xt, train=False, update_running=False)
        train_det_acc = float(
            (train_state.detector_logits.argmax(axis=1) == ydt).mean()
        )
        log.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                train_detector_accuracy=train_det_acc,
                val_loss=val["loss"],
                val_detector_accuracy=val["detector_accuracy"],
                val_joint_accuracy=val["joint_accuracy"],
                val_joint_f1=val["joint_f1"],
            )
        )
        if val["joint_f1"] > best_f1:
            best_f1 = val["joint_f1"]
            best_snap = net.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.early_stop_patience:
                break
    net.restore(best_snap)
    return net, log


# -- inference -------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    detector: DetectorKind
    config: DetectorConfig
    detector_index: int
    param_index: int
    p: np.ndarray
    q: np.ndarray


def predict(net: SelectorNet, w: Window) -> Prediction:
    """Classify one window; ties resolve to the lowest index."""
    if net.window_size is not None and len(w.values) != net.window_size:
        raise NetError(f"window length {len(w.values)} != expected {net.window_size}")
    values = w.values if w.normalized else normalize_window(w).values
    x = values.astype(np.float64)[None, None, :]
    state = net.forward(x, train=False, update_running=False)
    p = softmax(state.detector_logits)[0]
    detector_index = int(state.detector_logits[0].argmax())
    mask = net.mask_table[detector_index]
    q = softmax(state.param_logits, mask[None, :])[0]
    masked_logits = np.where(mask, state.param_logits[0], -np.inf)
    param_index = int(masked_logits.argmax())
    config = net.grids[detector_index].combos[param_index]
    return Prediction(
        detector=config.kind,
        config=config,
        detector_index=detector_index,
        param_index=param_index,
        p=p,
        q=q,
    )


def detect_adaptive(
    net: SelectorNet, w: Window, context: Sequence[Window] = ()
) -> tuple[DetectionResult, Prediction]:
    """Predict a combo for the window, then run it on the raw values."""
    if w.normalized:
        raise NetError("detect_adaptive needs the raw window, not the normalized one")
    chosen = predict(net, w)
    return run_detector(chosen.config, w, context=context), chosen


# -- persistence -----------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "dtype": "f8",
        "hex": arr.astype("<f8").tobytes().hex(),
    }


def _decode_array(doc: dict, name: str) -> np.ndarray:
    raw = bytes.fromhex(doc["hex"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    expected = int(np.prod(doc["shape"])) if doc["shape"] else 1
    if arr.size != expected:
        raise NetError(f"weight {name}: payload size {arr.size} != shape {doc['shape']}")
    return arr.reshape(doc["shape"])


def save_model(net: SelectorNet, path: str | Path) -> None:
    """Versioned JSON with hex-encoded float64 weights; bit-exact round trip."""
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": net.spec.to_json(),
        "grid_fingerprint": grid_fingerprint(net.grids),
        "normalization": {"scheme": "zscore_per_window", "window_size": net.window_size},
        "weights": {name: _encode_array(arr) for name, arr in net.state_arrays().items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path, grids: Sequence[ParamGrid]) -> SelectorNet:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise NetError(f"unsupported model format_version {doc.get('format_version')!r}")
    if doc.get("grid_fingerprint") != grid_fingerprint(grids):
        raise NetError("model was labeled against a different grid")
    spec = ArchitectureSpec.from_json(doc["architecture"])
    net = SelectorNet(spec, grids, seed=0, window_size=doc["normalization"].get("window_size"))
    live = net.state_arrays()
    stored = doc["weights"]
    missing = sorted(set(live) - set(stored))
    unknown = sorted(set(stored) - set(live))
    if missing or unknown:
        raise NetError(f"weight name mismatch: missing={missing} unknown={unknown}")
    for name, arr in live.items():
        decoded = _decode_array(stored[name], name)
        if decoded.shape != arr.shape:
            raise NetError(
                f"weight {name}: stored shape {decoded.shape} != expected {arr.shape}"
            )
        arr[...] = decoded
    return net
