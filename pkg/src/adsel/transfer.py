"""Backbone pretraining on labeled shape corpora, and transplanting.

The convolutional trunk is trained on an auxiliary classification task
(synthetic shapes or any UCR-format corpus), then its weights are copied
into a selector network whose heads keep their fresh initialization. The
backbone can be frozen outright, frozen for the first few epochs, or left
trainable from the start.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .detectors import ParamGrid
from .net import (
    ArchitectureSpec,
    FORMAT_VERSION,
    EpochStats,
    NetError,
    SelectorNet,
    TrainConfig,
    _Backbone,
    _decode_array,
    _encode_array,
    train,
)
from .nn import Adam, Dense, cross_entropy
from .oracle import SupervisedExample

__all__ = [
    "TransferError",
    "FREEZE_MODES",
    "DEFAULT_UNFREEZE_EPOCH",
    "adapt_length",
    "pretrain_backbone",
    "transplant",
    "train_with_transfer",
    "save_backbone",
    "load_backbone",
]

# Freeze handling for the transplanted trunk:
#   "none"      train everything from the first epoch
#   "schedule"  frozen for DEFAULT_UNFREEZE_EPOCH epochs, then released
#   "always"    only the heads ever train
FREEZE_MODES = ("none", "schedule", "always")
DEFAULT_UNFREEZE_EPOCH = 10


class TransferError(ValueError):
    pass


def adapt_length(values: np.ndarray, target_length: int) -> np.ndarray:
    """Linearly resample a series onto target_length points."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise TransferError("cannot resample a series shorter than 2 points")
    if target_length < 2:
        raise TransferError("target_length must be >= 2")
    if len(values) == target_length:
        return values.copy()
    old = np.linspace(0.0, 1.0, len(values))
    new = np.linspace(0.0, 1.0, target_length)
    return np.interp(new, old, values)


def _normalize(values: np.ndarray) -> np.ndarray:
    # Matches the per-window z-score the selector sees at train time.
    std = values.std()
    if std < 1e-12:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def pretrain_backbone(
    source: Sequence[tuple[int, np.ndarray]],
    spec: ArchitectureSpec,
    config: TrainConfig,
    window_size: int,
) -> dict[str, np.ndarray]:
    """Train trunk + throwaway classifier on (label, series) rows.

    Rows are resampled to window_size and z-scored. Returns the trunk's
    arrays by name (batch-norm statistics included); the classifier layer
    is discarded. Labels may be any integers; they are remapped to a
    contiguous range.
    """
    if not source:
        raise TransferError("empty pretraining source")
    labels_raw = sorted({label for label, _ in source})
    if len(labels_raw) < 2:
        raise TransferError(f"need at least 2 source classes, got {len(labels_raw)}")
    remap = {label: i for i, label in enumerate(labels_raw)}

    x = np.stack([_normalize(adapt_length(values, window_size)) for _, values in source])
    x = x[:, None, :]
    y = np.array([remap[label] for label, _ in source], dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    backbone = _Backbone("backbone", spec, rng)
    classifier = Dense("pretrain_head", backbone.feature_width, len(labels_raw), rng)
    params = backbone.params() + classifier.params()
    optimizer = Adam(params, learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng((config.seed, 0x7F))

    for _ in range(config.max_epochs):
        order = shuffle_rng.permutation(len(x))
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            optimizer.zero_grad()
            logits = classifier.forward(backbone.forward(x[batch], train=True))
            loss, grad = cross_entropy(logits, y[batch])
            if not np.isfinite(loss):
                raise TransferError("non-finite pretraining loss")
            backbone.backward(classifier.backward(grad))
            optimizer.step()

    weights = {p.name: p.value.copy() for p in backbone.params()}
    weights.update({name: arr.copy() for name, arr in backbone.state().items()})
    return weights


def pretrain_accuracy(
    weights: dict[str, np.ndarray],
    spec: ArchitectureSpec,
    source: Sequence[tuple[int, np.ndarray]],
    window_size: int,
    config: TrainConfig,
) -> float:
    """Refit only the classifier on frozen trunk features; report accuracy.

    The throwaway head is not returned by pretrain_backbone, so source
    accuracy is measured the way the trunk will be used: features frozen,
    a linear probe trained on top.
    """
    labels_raw = sorted({label for label, _ in source})
    remap = {label: i for i, label in enumerate(labels_raw)}
    x = np.stack([_normalize(adapt_length(v, window_size)) for _, v in source])[:, None, :]
    y = np.array([remap[label] for label, _ in source], dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    backbone = _Backbone("backbone", spec, rng)
    for name, arr in backbone.state().items():
        arr[...] = weights[name]
    for p in backbone.params():
        p.value[...] = weights[p.name]
    features = backbone.forward(x, train=False)

    probe = Dense("probe", backbone.feature_width, len(labels_raw), rng)
    optimizer = Adam(probe.params(), learning_rate=config.learning_rate)
    # Full-batch steps are tiny; a fixed budget keeps the probe from
    # underfitting when the caller pretrained with few epochs.
    for _ in range(max(300, config.max_epochs)):
        optimizer.zero_grad()
        loss, grad = cross_entropy(probe.forward(features), y)
        probe.backward(grad)
        optimizer.step()
    predictions = probe.forward(features).argmax(axis=1)
    return float((predictions == y).mean())


def transplant(
    backbone_weights: dict[str, np.ndarray],
    net: SelectorNet,
    freeze: bool = False,
) -> SelectorNet:
    """Copy pretrained trunk arrays into the selector, in place.

    Heads keep their fresh initialization; the separate-wiring second
    trunk (if any) does too. freeze=True marks the shared trunk
    non-trainable; pair with train(unfreeze_epoch=...) for a schedule.
    """
    live = {
        name: arr
        for name, arr in net.state_arrays().items()
        if name.startswith("backbone.")
    }
    missing = sorted(set(live) - set(backbone_weights))
    unknown = sorted(set(backbone_weights) - set(live))
    if missing or unknown:
        raise TransferError(
            f"backbone name mismatch: missing={missing} unknown={unknown}"
        )
    bad_shapes = [
        f"{name} (stored {np.shape(backbone_weights[name])}, expected {arr.shape})"
        for name, arr in live.items()
        if np.shape(backbone_weights[name]) != arr.shape
    ]
    if bad_shapes:
        raise TransferError("incompatible backbone tensors: " + ", ".join(bad_shapes))
    for name, arr in live.items():
        arr[...] = backbone_weights[name]
    if freeze:
        for p in net.backbone.params():
            p.trainable = False
    return net


def train_with_transfer(
    examples: Sequence[SupervisedExample],
    spec: ArchitectureSpec,
    grids: Sequence[ParamGrid],
    config: TrainConfig,
    backbone_weights: dict[str, np.ndarray],
    freeze: str = "schedule",
    unfreeze_epoch: int = DEFAULT_UNFREEZE_EPOCH,
) -> tuple[SelectorNet, list[EpochStats]]:
    """Build, transplant, train under the chosen freeze mode."""
    if freeze not in FREEZE_MODES:
        raise TransferError(f"freeze must be one of {FREEZE_MODES}, got {freeze!r}")
    net = SelectorNet(spec, grids, seed=config.seed)
    transplant(backbone_weights, net, freeze=freeze != "none")
    return train(
        examples,
        spec,
        grids,
        config,
        net=net,
        unfreeze_epoch=unfreeze_epoch if freeze == "schedule" else None,
    )


def save_backbone(weights: dict[str, np.ndarray], path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "backbone_only": True,
        "weights": {name: _encode_array(np.asarray(arr)) for name, arr in weights.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_backbone(path: str | Path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise TransferError(f"unsupported format_version {doc.get('format_version')!r}")
    if not doc.get("backbone_only"):
        raise TransferError("not a backbone-only weight file")
    return {name: _decode_array(entry, name) for name, entry in doc["weights"].items()}
