"""Command-line surface.

Subcommands:
  synth         generate the synthetic benchmark corpus as S5-style CSVs
  ingest        validate and canonicalize external S5-style CSVs
  label         oracle-sweep a corpus into a labeled dataset directory
  pretrain      train a trunk on a labeled shape corpus
  train         train the selector on a labeled dataset
  evaluate      score a model, a fixed combo, and/or the voting baseline
  detect        run a trained model over one series
  bench_window  repeat the baseline evaluation across window sizes
  report        per-combo sweep tables and bar charts

Every command takes --config pointing at a run-config JSON (schema in the
README) plus a few flag overrides, and writes a manifest next to its
outputs recording the effective config hash, seed, and versions. All
output CSVs have a fixed column order. Exit code 0 on success; config
problems exit 2 (every offending key listed), runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .baseline import (
    BaselineError,
    VOTE_RULES,
    applicable_pool,
    default_vote_pool,
    vote_detect,
)
from .core import (
    ConfusionCounts,
    SeriesError,
    TimeSeries,
    Window,
    compute_metrics,
    score_mask,
    slide_windows,
)
from .data import (
    DataError,
    default_corpus,
    load_dataset,
    make_classification_source,
    read_s5,
    read_ucr,
    save_dataset,
    write_s5,
)
from .detectors import (
    DetectorError,
    ParamGrid,
    default_grid,
    enumerate_combos,
    grids_from_override,
    run_detector,
)
from .net import (
    ArchitectureSpec,
    ConvBlockSpec,
    DESK_BLOCKS,
    FULL_BLOCKS,
    NetError,
    SelectorNet,
    TrainConfig,
    detect_adaptive,
    load_model,
    save_model,
    train,
)
from .nn import NNError
from .oracle import (
    OracleError,
    SupervisedExample,
    build_dataset,
    class_counts,
    select_best,
    sweep_window,
)
from .transfer import (
    DEFAULT_UNFREEZE_EPOCH,
    FREEZE_MODES,
    TransferError,
    load_backbone,
    pretrain_backbone,
    save_backbone,
    train_with_transfer,
)

__all__ = ["main", "ConfigError", "CliError", "load_run_config", "RunConfig"]


class ConfigError(ValueError):
    pass


class CliError(RuntimeError):
    pass


# --- run configuration ----------------------------------------------------

_VARIANTS = {"ns": "NS", "ssr": "SSR", "atsdln": "ATSDLN"}
_PROFILES = {"desk": DESK_BLOCKS, "full": FULL_BLOCKS}
_WEIGHTINGS = ("none", "inverse")

_TOP_KEYS = {"seed", "window_size", "stride", "scale", "freeze", "grid",
             "architecture", "train", "baseline", "pretrain"}
_ARCH_KEYS = {"variant", "profile", "conv_blocks", "detector_head_hidden",
              "param_head_hidden"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "max_epochs", "early_stop_patience",
               "loss_weight_lambda", "class_weighting"}
_BASELINE_KEYS = {"rule", "weights"}
_PRETRAIN_KEYS = {"classes", "examples_per_class", "epochs"}


@dataclass(frozen=True)
class RunConfig:
    """Effective settings after merging defaults, file, and flag overrides."""

    seed: int = 42
    window_size: int = 200
    stride: int = 100
    scale: float = 1.0
    freeze: str = "schedule"
    variant: str = "ATSDLN"
    profile: str = "desk"
    conv_blocks: tuple[ConvBlockSpec, ...] | None = None
    detector_head_hidden: int = 64
    param_head_hidden: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    loss_weight_lambda: float = 1.0
    class_weighting: str = "none"
    baseline_rule: str = "absolute"
    baseline_weights: tuple[float, ...] | None = None
    pretrain_classes: tuple[str, ...] = ("sine", "square")
    pretrain_examples_per_class: int = 40
    pretrain_epochs: int = 30
    grids: tuple[ParamGrid, ...] = field(default_factory=default_grid)
    grid_doc: dict | None = None

    def blocks(self) -> tuple[ConvBlockSpec, ...]:
        return self.conv_blocks if self.conv_blocks is not None else _PROFILES[self.profile]

    def architecture(self) -> ArchitectureSpec:
        return ArchitectureSpec.for_grid(
            self.grids,
            variant=self.variant,
            conv_blocks=self.blocks(),
            detector_head_hidden=self.detector_head_hidden,
            param_head_hidden=self.param_head_hidden,
        )

    def train_config(self, class_weights: tuple[float, ...] | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            loss_weight_lambda=self.loss_weight_lambda,
            seed=self.seed,
            detector_class_weights=class_weights,
        )

    def document(self) -> dict:
        """Canonical JSON form; hashed into every manifest."""
        doc = {
            "seed": self.seed,
            "window_size": self.window_size,
            "stride": self.stride,
            "scale": self.scale,
            "freeze": self.freeze,
            "architecture": {
                "variant": self.variant,
                "profile": self.profile,
                "conv_blocks": [[b.filters, b.kernel_size] for b in self.blocks()],
                "detector_head_hidden": self.detector_head_hidden,
                "param_head_hidden": self.param_head_hidden,
            },
            "train": {
                "learning_rate": self.learning_rate,
                "batch_size": self.batch_size,
                "max_epochs": self.max_epochs,
                "early_stop_patience": self.early_stop_patience,
                "loss_weight_lambda": self.loss_weight_lambda,
                "class_weighting": self.class_weighting,
            },
            "baseline": {
                "rule": self.baseline_rule,
                "weights": list(self.baseline_weights) if self.baseline_weights else None,
            },
            "pretrain": {
                "classes": list(self.pretrain_classes),
                "examples_per_class": self.pretrain_examples_per_class,
                "epochs": self.pretrain_epochs,
            },
        }
        if self.grid_doc is not None:
            doc["grid"] = self.grid_doc
        return doc


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _parse_blocks(raw, problems: list[str]) -> tuple[ConvBlockSpec, ...] | None:
    if not isinstance(raw, list) or not raw:
        problems.append("architecture.conv_blocks: must be a nonempty list")
        return None
    blocks = []
    for i, entry in enumerate(raw):
        if isinstance(entry, dict) and set(entry) == {"filters", "kernel_size"}:
            filters, kernel = entry["filters"], entry["kernel_size"]
        elif isinstance(entry, list) and len(entry) == 2:
            filters, kernel = entry
        else:
            problems.append(
                f"architecture.conv_blocks[{i}]: expected [filters, kernel_size]"
            )
            continue
        if not (_is_int(filters) and _is_int(kernel) and filters > 0 and kernel > 0):
            problems.append(
                f"architecture.conv_blocks[{i}]: filters and kernel_size must be positive integers"
            )
            continue
        blocks.append(ConvBlockSpec(filters, kernel))
    return tuple(blocks) if blocks and len(blocks) == len(raw) else None


def _merge_config(doc: dict) -> RunConfig:
    problems: list[str] = []
    for key in sorted(set(doc) - _TOP_KEYS):
        problems.append(f"{key}: unknown key")
    values: dict = {}

    def take(key, pred, message, default_section=doc, prefix=""):
        if key in default_section:
            v = default_section[key]
            if pred(v):
                return v
            problems.append(f"{prefix}{key}: {message}")
        return None

    v = take("seed", _is_int, "must be an integer")
    if v is not None:
        values["seed"] = v
    v = take("window_size", lambda x: _is_int(x) and x >= 16, "must be an integer >= 16")
    if v is not None:
        values["window_size"] = v
    v = take("stride", lambda x: _is_int(x) and x >= 1, "must be a positive integer")
    if v is not None:
        values["stride"] = v
    v = take("scale", lambda x: _is_num(x) and x > 0, "must be a positive number")
    if v is not None:
        values["scale"] = float(v)
    v = take("freeze", lambda x: x in FREEZE_MODES, f"must be one of {list(FREEZE_MODES)}")
    if v is not None:
        values["freeze"] = v

    arch = doc.get("architecture", {})
    if not isinstance(arch, dict):
        problems.append("architecture: must be an object")
        arch = {}
    for key in sorted(set(arch) - _ARCH_KEYS):
        problems.append(f"architecture.{key}: unknown key")
    v = take(
        "variant",
        lambda x: isinstance(x, str) and x.lower() in _VARIANTS,
        f"must be one of {sorted(_VARIANTS)}",
        arch,
        "architecture.",
    )
    if v is not None:
        values["variant"] = _VARIANTS[v.lower()]
    v = take(
        "profile", lambda x: x in _PROFILES, f"must be one of {sorted(_PROFILES)}",
        arch, "architecture.",
    )
    if v is not None:
        values["profile"] = v
    if "conv_blocks" in arch:
        blocks = _parse_blocks(arch["conv_blocks"], problems)
        if blocks is not None:
            values["conv_blocks"] = blocks
    for key in ("detector_head_hidden", "param_head_hidden"):
        v = take(key, lambda x: _is_int(x) and x > 0, "must be a positive integer",
                 arch, "architecture.")
        if v is not None:
            values[key] = v

    tr = doc.get("train", {})
    if not isinstance(tr, dict):
        problems.append("train: must be an object")
        tr = {}
    for key in sorted(set(tr) - _TRAIN_KEYS):
        problems.append(f"train.{key}: unknown key")
    v = take("learning_rate", lambda x: _is_num(x) and x >= 0, "must be a number >= 0",
             tr, "train.")
    if v is not None:
        values["learning_rate"] = float(v)
    for key in ("batch_size", "max_epochs"):
        v = take(key, lambda x: _is_int(x) and x > 0, "must be a positive integer", tr, "train.")
        if v is not None:
            values[key] = v
    v = take("early_stop_patience", lambda x: _is_int(x) and x >= 0,
             "must be an integer >= 0", tr, "train.")
    if v is not None:
        values["early_stop_patience"] = v
    v = take("loss_weight_lambda", lambda x: _is_num(x) and x >= 0,
             "must be a number >= 0", tr, "train.")
    if v is not None:
        values["loss_weight_lambda"] = float(v)
    v = take("class_weighting", lambda x: x in _WEIGHTINGS,
             f"must be one of {list(_WEIGHTINGS)}", tr, "train.")
    if v is not None:
        values["class_weighting"] = v

    base = doc.get("baseline", {})
    if not isinstance(base, dict):
        problems.append("baseline: must be an object")
        base = {}
    for key in sorted(set(base) - _BASELINE_KEYS):
        problems.append(f"baseline.{key}: unknown key")
    v = take("rule", lambda x: x in VOTE_RULES, f"must be one of {list(VOTE_RULES)}",
             base, "baseline.")
    if v is not None:
        values["baseline_rule"] = v
    if base.get("weights") is not None:
        w = base["weights"]
        if isinstance(w, list) and all(_is_num(x) and x >= 0 for x in w):
            values["baseline_weights"] = tuple(float(x) for x in w)
        else:
            problems.append("baseline.weights: must be a list of nonnegative numbers")

    pre = doc.get("pretrain", {})
    if not isinstance(pre, dict):
        problems.append("pretrain: must be an object")
        pre = {}
    for key in sorted(set(pre) - _PRETRAIN_KEYS):
        problems.append(f"pretrain.{key}: unknown key")
    if "classes" in pre:
        c = pre["classes"]
        if isinstance(c, list) and len(c) >= 2 and all(isinstance(x, str) for x in c):
            values["pretrain_classes"] = tuple(c)
        else:
            problems.append("pretrain.classes: must be a list of at least 2 class names")
    v = take("examples_per_class", lambda x: _is_int(x) and x > 0,
             "must be a positive integer", pre, "pretrain.")
    if v is not None:
        values["pretrain_examples_per_class"] = v
    v = take("epochs", lambda x: _is_int(x) and x > 0, "must be a positive integer",
             pre, "pretrain.")
    if v is not None:
        values["pretrain_epochs"] = v

    if "grid" in doc:
        try:
            values["grids"] = grids_from_override(doc["grid"])
            values["grid_doc"] = doc["grid"]
        except DetectorError as exc:
            problems.append(f"grid: {exc}")

    if problems:
        raise ConfigError("invalid run config:\n  " + "\n  ".join(problems))
    return RunConfig(**values)


def load_run_config(path: str | Path | None, overrides: argparse.Namespace | None = None) -> RunConfig:
    """Merge defaults <- config file <- command-line overrides."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must contain a JSON object")
    config = _merge_config(doc)
    if overrides is None:
        return config
    updates: dict = {}
    if getattr(overrides, "seed", None) is not None:
        updates["seed"] = overrides.seed
    if getattr(overrides, "window_size", None) is not None:
        if overrides.window_size < 16:
            raise ConfigError("window_size: must be an integer >= 16")
        updates["window_size"] = overrides.window_size
    if getattr(overrides, "stride", None) is not None:
        if overrides.stride < 1:
            raise ConfigError("stride: must be a positive integer")
        updates["stride"] = overrides.stride
    if getattr(overrides, "variant", None) is not None:
        token = overrides.variant.lower()
        if token not in _VARIANTS:
            raise ConfigError(f"variant: must be one of {sorted(_VARIANTS)}")
        updates["variant"] = _VARIANTS[token]
    if getattr(overrides, "freeze", None) is not None:
        if overrides.freeze not in FREEZE_MODES:
            raise ConfigError(f"freeze: must be one of {list(FREEZE_MODES)}")
        updates["freeze"] = overrides.freeze
    if getattr(overrides, "grid", None) is not None:
        try:
            grid_doc = json.loads(Path(overrides.grid).read_text())
            updates["grids"] = grids_from_override(grid_doc)
            updates["grid_doc"] = grid_doc
        except (OSError, json.JSONDecodeError, DetectorError) as exc:
            raise ConfigError(f"grid: {exc}") from exc
    return replace(config, **updates) if updates else config


# --- shared plumbing ------------------------------------------------------


def _write_manifest(target: Path, command: str, config: RunConfig, inputs: dict) -> None:
    canonical = json.dumps(config.document(), sort_keys=True)
    doc = {
        "command": command,
        "config": config.document(),
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.seed,
        "versions": {
            "adsel": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "inputs": inputs,
    }
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _read_corpus(directory: str | Path) -> list[TimeSeries]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise CliError(f"no .csv series found in {directory}")
    return [read_s5(p) for p in paths]


def _grouped(examples: Sequence[SupervisedExample]) -> list[tuple[SupervisedExample, list[Window]]]:
    """Pair each example with the earlier raw windows of its own series."""
    by_series: dict[str, list[SupervisedExample]] = {}
    for e in examples:
        by_series.setdefault(e.raw_window.parent_id, []).append(e)
    out = []
    for pid in sorted(by_series):
        rows = sorted(by_series[pid], key=lambda e: e.raw_window.start_index)
        windows = [e.raw_window for e in rows]
        for i, e in enumerate(rows):
            out.append((e, windows[:i]))
    return out


def _pool_counts(counts: Sequence[ConfusionCounts]) -> ConfusionCounts:
    return ConfusionCounts(
        tp=sum(c.tp for c in counts),
        fp=sum(c.fp for c in counts),
        fn=sum(c.fn for c in counts),
        tn=sum(c.tn for c in counts),
    )


METRIC_COLUMNS = [
    "windows", "tp", "fp", "fn", "tn", "precision", "recall", "fpr", "f1", "error",
]


def _metric_row(pooled: ConfusionCounts, n_windows: int) -> dict:
    report = compute_metrics(pooled)
    return {
        "windows": n_windows,
        "tp": pooled.tp,
        "fp": pooled.fp,
        "fn": pooled.fn,
        "tn": pooled.tn,
        "precision": f"{report.precision:.6f}",
        "recall": f"{report.recall:.6f}",
        "fpr": f"{report.fpr:.6f}",
        "f1": f"{report.f1:.6f}",
        "error": f"{report.error:.6f}",
    }


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _bar_chart_svg(title: str, labels: Sequence[str], values: Sequence[float]) -> str:
    """Static bar chart, one bar per combo, y fixed to [0, 1]."""
    bar_w, gap, left, top, plot_h = 24, 6, 60, 40, 260
    width = left + len(values) * (bar_w + gap) + 20
    height = top + plot_h + 60
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1.0 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{width - 10}" y2="{y:.1f}" '
            f'stroke="#ccc" stroke-width="1"/>'
        )
        parts.append(f'<text x="{left - 34}" y="{y + 4:.1f}">{frac:.2f}</text>')
    for i, (label, value) in enumerate(zip(labels, values)):
        v = min(max(float(value), 0.0), 1.0)
        x = left + i * (bar_w + gap)
        h = plot_h * v
        y = top + plot_h - h
        parts.append(
            f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" height="{h:.1f}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{top + plot_h + 14}" '
            f'text-anchor="middle">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- commands -------------------------------------------------------------


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = default_corpus(seed=config.seed, scale=config.scale)
    for series in corpus:
        write_s5(series, out / f"{series.id}.csv")
    _write_manifest(out, "synth", config, {"series": len(corpus)})
    print(f"wrote {len(corpus)} series to {out}")
    return 0


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    sources: list[Path] = []
    for raw in args.inputs:
        p = Path(raw)
        if p.is_dir():
            sources += sorted(p.glob("*.csv"))
        else:
            sources.append(p)
    if not sources:
        raise CliError("no input files")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for src in sources:
        series = read_s5(src)
        write_s5(series, out / f"{series.id}.csv")
    _write_manifest(out, "ingest", config, {"series": len(sources)})
    print(f"ingested {len(sources)} series into {out}")
    return 0


def cmd_label(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = _read_corpus(args.data)
    examples = build_dataset(corpus, config.window_size, config.stride, config.grids)
    out = Path(args.out)
    save_dataset(examples, config.grids, out)
    counts = class_counts(examples, len(config.grids))
    _write_manifest(
        out, "label", config,
        {"corpus": str(args.data), "examples": len(examples), "label_counts": counts},
    )
    print(f"labeled {len(examples)} windows -> {out}")
    print("detector label counts: " + ", ".join(
        f"{grid.kind.value}={n}" for grid, n in zip(config.grids, counts)
    ))
    return 0


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    if args.source:
        source = read_ucr(args.source)
        origin = str(args.source)
    else:
        source = make_classification_source(
            config.pretrain_examples_per_class,
            config.window_size,
            seed=config.seed,
            classes=config.pretrain_classes,
        )
        origin = "synthetic:" + ",".join(config.pretrain_classes)
    pre_config = replace(
        config.train_config(), max_epochs=config.pretrain_epochs
    )
    weights = pretrain_backbone(
        source, config.architecture(), pre_config, config.window_size
    )
    out = Path(args.out)
    save_backbone(weights, out)
    _write_manifest(out, "pretrain", config, {"source": origin, "examples": len(source)})
    print(f"pretrained trunk on {len(source)} examples ({origin}) -> {out}")
    return 0


def _class_weights(examples: Sequence[SupervisedExample], config: RunConfig) -> tuple[float, ...] | None:
    if config.class_weighting != "inverse":
        return None
    counts = class_counts(examples, len(config.grids))
    total = len(examples)
    k = len(counts)
    return tuple(total / (k * c) if c else 0.0 for c in counts)


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    examples = load_dataset(args.data, config.grids)
    spec = config.architecture()
    train_cfg = config.train_config(class_weights=_class_weights(examples, config))
    if args.pretrained:
        weights = load_backbone(args.pretrained)
        net, log = train_with_transfer(
            examples, spec, config.grids, train_cfg, weights,
            freeze=config.freeze, unfreeze_epoch=DEFAULT_UNFREEZE_EPOCH,
        )
    else:
        net, log = train(examples, spec, config.grids, train_cfg)
    out = Path(args.out)
    save_model(net, out)
    log_path = out.with_name(out.stem + ".log.csv")
    _write_csv(
        log_path,
        ["epoch", "train_loss", "train_detector_accuracy", "val_loss",
         "val_detector_accuracy", "val_joint_accuracy", "val_joint_f1"],
        [
            {
                "epoch": r.epoch,
                "train_loss": f"{r.train_loss:.6f}",
                "train_detector_accuracy": f"{r.train_detector_accuracy:.6f}",
                "val_loss": f"{r.val_loss:.6f}",
                "val_detector_accuracy": f"{r.val_detector_accuracy:.6f}",
                "val_joint_accuracy": f"{r.val_joint_accuracy:.6f}",
                "val_joint_f1": f"{r.val_joint_f1:.6f}",
            }
            for r in log
        ],
    )
    _write_manifest(
        out, "train", config,
        {
            "dataset": str(args.data),
            "examples": len(examples),
            "pretrained": str(args.pretrained) if args.pretrained else None,
            "epochs_trained": len(log),
            "best_val_joint_f1": max(r.val_joint_f1 for r in log),
        },
    )
    print(f"trained {config.variant} for {len(log)} epochs -> {out}")
    print(f"best validation joint F1: {max(r.val_joint_f1 for r in log):.4f}")
    return 0


def _score_model(net: SelectorNet, grouped) -> tuple[ConfusionCounts, int]:
    counts = [
        score_mask(detect_adaptive(net, e.raw_window, ctx)[0].mask, e.raw_window.labels)
        for e, ctx in grouped
    ]
    return _pool_counts(counts), len(counts)


def _score_combo(config_obj, grouped) -> tuple[ConfusionCounts, int]:
    counts = [
        score_mask(run_detector(config_obj, e.raw_window, context=ctx).mask, e.raw_window.labels)
        for e, ctx in grouped
    ]
    return _pool_counts(counts), len(counts)


def _score_baseline(pool, rule, weights, grouped) -> tuple[ConfusionCounts, int]:
    counts = [
        score_mask(
            vote_detect(e.raw_window, pool, rule=rule, weights=weights, context=ctx).mask,
            e.raw_window.labels,
        )
        for e, ctx in grouped
    ]
    return _pool_counts(counts), len(counts)


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    if args.model is None and args.combo is None and args.baseline is None:
        raise CliError("evaluate needs at least one of --model, --combo, --baseline")
    examples = load_dataset(args.data, config.grids)
    grouped = _grouped(examples)
    combos = enumerate_combos(config.grids)
    rows = []
    if args.model is not None:
        net = load_model(args.model, config.grids)
        pooled, n = _score_model(net, grouped)
        rows.append({"scorer": "model", "detail": Path(args.model).name,
                     **_metric_row(pooled, n)})
    if args.combo is not None:
        if not (0 <= args.combo < len(combos)):
            raise CliError(f"--combo must be in [0, {len(combos) - 1}]")
        ref = combos[args.combo]
        pooled, n = _score_combo(ref.config, grouped)
        rows.append({"scorer": "combo", "detail": f"{args.combo}:{ref.config.label()}",
                     **_metric_row(pooled, n)})
    if args.baseline is not None:
        if args.baseline not in VOTE_RULES:
            raise CliError(f"--baseline must be one of {list(VOTE_RULES)}")
        pool = default_vote_pool(config.grids)
        weights = config.baseline_weights if args.baseline == "weighted" else None
        pooled, n = _score_baseline(pool, args.baseline, weights, grouped)
        rows.append({"scorer": "baseline", "detail": args.baseline,
                     **_metric_row(pooled, n)})
    out = Path(args.out)
    _write_csv(out, ["scorer", "detail"] + METRIC_COLUMNS, rows)
    _write_manifest(out, "evaluate", config, {"dataset": str(args.data), "rows": len(rows)})
    for row in rows:
        print(f"{row['scorer']}({row['detail']}): f1={row['f1']} error={row['error']}")
    return 0


def cmd_detect(args: argparse.Namespace, config: RunConfig) -> int:
    net = load_model(args.model, config.grids)
    series = read_s5(args.series)
    windows = slide_windows(series, config.window_size, config.stride)
    if not windows:
        raise CliError(
            f"series {series.id} shorter than window_size {config.window_size}"
        )
    rows = []
    for i, w in enumerate(windows):
        result, chosen = detect_adaptive(net, w, context=windows[:i])
        for offset, flag in enumerate(result.mask.flags):
            idx = w.start_index + offset
            rows.append({
                "series_id": series.id,
                "window_start": w.start_index,
                "index": idx,
                "timestamp": series.timestamps[idx],
                "value": repr(float(series.values[idx])),
                "flag": int(flag),
                "detector": chosen.config.kind.value,
                "combo": chosen.config.label(),
            })
    out = Path(args.out)
    _write_csv(
        out,
        ["series_id", "window_start", "index", "timestamp", "value", "flag",
         "detector", "combo"],
        rows,
    )
    _write_manifest(out, "detect", config, {"series": str(args.series), "windows": len(windows)})
    flagged = sum(r["flag"] for r in rows)
    print(f"detect over {len(windows)} windows: {flagged} flagged points -> {out}")
    return 0


def cmd_bench_window(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = _read_corpus(args.data)
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [50, 100, 150, 200]
    bad = [s for s in sizes if s < 16]
    if bad:
        raise CliError(f"window sizes must be >= 16, got {bad}")
    full_pool = default_vote_pool(config.grids)
    rows = []
    for size in sizes:
        # Stride keeps the configured overlap ratio at every size.
        stride = max(1, round(size * config.stride / config.window_size))
        pool = applicable_pool(full_pool, size)
        counts = []
        for series in corpus:
            windows = slide_windows(series, size, stride)
            for i, w in enumerate(windows):
                result = vote_detect(
                    w, pool, rule=config.baseline_rule,
                    weights=config.baseline_weights if config.baseline_rule == "weighted" else None,
                    context=windows[:i],
                )
                counts.append(score_mask(result.mask, w.labels))
        pooled = _pool_counts(counts)
        rows.append({"window_size": size, "stride": stride,
                     **_metric_row(pooled, len(counts))})
    out = Path(args.out)
    _write_csv(out, ["window_size", "stride"] + METRIC_COLUMNS, rows)
    _write_manifest(out, "bench_window", config, {"corpus": str(args.data), "sizes": sizes})
    for row in rows:
        print(f"window {row['window_size']}: baseline f1={row['f1']}")
    return 0


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = _read_corpus(args.data)
    combos = enumerate_combos(config.grids)
    pooled = [[] for _ in combos]
    scores = [[] for _ in combos]
    wins = [0] * len(combos)
    n_windows = 0
    for series in corpus:
        windows = slide_windows(series, config.window_size, config.stride)
        for i, w in enumerate(windows):
            swept = sweep_window(w, config.grids, context=windows[:i], combos=combos)
            n_windows += 1
            wins[select_best(swept).combo_index] += 1
            for j, s in enumerate(swept):
                pooled[j].append(s.counts)
                scores[j].append(s.window_score)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for ref, combo_scores, combo_counts, combo_wins in zip(combos, scores, pooled, wins):
        merged = _pool_counts(combo_counts)
        rows.append({
            "combo_index": ref.combo_index,
            "detector": ref.config.kind.value,
            "params": ref.config.label(),
            "mean_window_score": f"{float(np.mean(combo_scores)):.6f}",
            "oracle_wins": combo_wins,
            **_metric_row(merged, n_windows),
        })
    _write_csv(
        out_dir / "combo_metrics.csv",
        ["combo_index", "detector", "params", "mean_window_score", "oracle_wins"]
        + METRIC_COLUMNS,
        rows,
    )
    labels = [str(r["combo_index"]) for r in rows]
    (out_dir / "combo_mean_score.svg").write_text(
        _bar_chart_svg(
            "Mean per-window score by combo",
            labels,
            [float(r["mean_window_score"]) for r in rows],
        )
    )
    (out_dir / "combo_f1.svg").write_text(
        _bar_chart_svg(
            "Pooled F1 by combo", labels, [float(r["f1"]) for r in rows]
        )
    )
    _write_manifest(out_dir, "report", config, {"corpus": str(args.data), "windows": n_windows})
    print(f"report over {n_windows} windows, {len(combos)} combos -> {out_dir}")
    return 0


# --- argument parsing -----------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adsel",
        description="Adaptive per-window selection of anomaly detectors.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run-config JSON path")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--grid", help="grid override JSON path")
    common.add_argument("--variant", help="ns | ssr | atsdln")
    common.add_argument("--window-size", dest="window_size", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--freeze", help="none | schedule | always")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="canonicalize S5-style CSVs")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", parents=[common], help="oracle-label a corpus")
    p.add_argument("--data", required=True, help="corpus directory of S5 CSVs")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain the trunk")
    p.add_argument("--source", help="UCR-format file; omitted = synthetic shapes")
    p.add_argument("--out", required=True, help="backbone weight file to write")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", parents=[common], help="train the selector")
    p.add_argument("--data", required=True, help="labeled dataset directory")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--pretrained", help="backbone weight file to transplant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score detectors on a dataset")
    p.add_argument("--data", required=True, help="labeled dataset directory")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--model", help="model file to score")
    p.add_argument("--combo", type=int, help="fixed combo index to score")
    p.add_argument("--baseline", help="voting rule to score (absolute|relative|weighted)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect", parents=[common], help="run a model over one series")
    p.add_argument("--model", required=True)
    p.add_argument("--series", required=True, help="S5-style CSV")
    p.add_argument("--out", required=True, help="CSV to write")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser(
        "bench_window", parents=[common], help="baseline across window sizes"
    )
    p.add_argument("--data", required=True, help="corpus directory of S5 CSVs")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--sizes", help="comma-separated sizes (default 50,100,150,200)")
    p.set_defaults(func=cmd_bench_window)

    p = sub.add_parser("report", parents=[common], help="per-combo sweep report")
    p.add_argument("--data", required=True, help="corpus directory of S5 CSVs")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        CliError,
        DataError,
        DetectorError,
        OracleError,
        NetError,
        NNError,
        TransferError,
        BaselineError,
        SeriesError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
