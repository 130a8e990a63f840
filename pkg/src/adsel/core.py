"""Time-series containers, sliding windows, per-window normalization, metrics.

Everything here is pure over immutable inputs: functions return new objects
and never mutate their arguments, so they are safe to call from worker pools.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Below this, a window is treated as constant and normalizes to all zeros.
CONSTANT_STD = 1e-8


class SeriesError(ValueError):
    """Raised when a series or window violates a structural precondition."""


@dataclass(frozen=True)
class TimeSeries:
    """A labeled univariate series sampled at strictly increasing timestamps.

    `labels` marks each point with 1 (anomaly) or 0 (normal). Unlabeled
    series carry an all-zero label array only when explicitly constructed
    that way; readers always populate labels.
    """

    id: str
    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int8)
        if not (len(ts) == len(vals) == len(labs)):
            raise SeriesError(
                f"series {self.id!r}: timestamps/values/labels lengths differ "
                f"({len(ts)}/{len(vals)}/{len(labs)})"
            )
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise SeriesError(f"series {self.id!r}: timestamps not strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise SeriesError(f"series {self.id!r}: non-finite values")
        if not np.all((labs == 0) | (labs == 1)):
            raise SeriesError(f"series {self.id!r}: labels must be 0 or 1")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Window:
    """A fixed-length slice of a series, with its ground-truth flags."""

    parent_id: str
    start_index: int
    values: np.ndarray
    labels: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int8)
        if len(vals) == 0:
            raise SeriesError(f"window from {self.parent_id!r}: empty")
        if len(vals) != len(labs):
            raise SeriesError(
                f"window from {self.parent_id!r}: values/labels lengths differ"
            )
        if self.start_index < 0:
            raise SeriesError(f"window from {self.parent_id!r}: negative start index")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labs)

    @property
    def length(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class AnomalyMask:
    """Binary per-point detector output for one window."""

    flags: np.ndarray

    def __post_init__(self) -> None:
        flags = np.asarray(self.flags, dtype=np.int8)
        object.__setattr__(self, "flags", flags)

    def __len__(self) -> int:
        return len(self.flags)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    fpr: float
    f1: float
    error: float


def _ratio(num: float, den: float) -> float:
    # 0/0 convention: every undefined ratio evaluates to 0.
    return num / den if den > 0 else 0.0


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Derive the five evaluation metrics from raw confusion counts.

    `error` is fp/(tp+fp+fn): unlike the false-positive rate it is not
    diluted by the (large) true-negative mass, so it tracks the share of
    alarms that were wasted. All 0/0 cases evaluate to 0.
    """
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    fpr = _ratio(c.fp, c.fp + c.tn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    error = _ratio(c.fp, c.tp + c.fp + c.fn)
    return MetricReport(precision=precision, recall=recall, fpr=fpr, f1=f1, error=error)


def score_mask(predicted: AnomalyMask, truth: Sequence[int] | np.ndarray) -> ConfusionCounts:
    """Point-wise confusion counts, no tolerance windows or segment credit."""
    pred = np.asarray(predicted.flags, dtype=np.int8)
    true = np.asarray(truth, dtype=np.int8)
    if len(pred) != len(true):
        raise SeriesError(
            f"mask length {len(pred)} does not match truth length {len(true)}"
        )
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def slide_windows(series: TimeSeries, window_size: int, stride: int) -> list[Window]:
    """Cut a series into windows at offsets 0, stride, 2*stride, ...

    The final partial window is dropped. Labels are carried through
    unchanged. Raises when no window fits.
    """
    if window_size <= 0:
        raise SeriesError(f"series {series.id!r}: window_size must be positive")
    if stride <= 0:
        raise SeriesError(f"series {series.id!r}: stride must be positive")
    n = len(series)
    if window_size > n:
        raise SeriesError(
            f"series {series.id!r}: window_size {window_size} exceeds length {n}"
        )
    out = []
    for start in range(0, n - window_size + 1, stride):
        out.append(
            Window(
                parent_id=series.id,
                start_index=start,
                values=series.values[start : start + window_size].copy(),
                labels=series.labels[start : start + window_size].copy(),
            )
        )
    return out


def normalize_window(w: Window) -> Window:
    """Per-window z-score; constant windows map to all zeros.

    The normalized flag lets downstream consumers distinguish a truly
    constant window from one that happens to be centered already.
    """
    mean = float(np.mean(w.values))
    std = float(np.std(w.values))
    if std < CONSTANT_STD:
        vals = np.zeros_like(w.values)
    else:
        vals = (w.values - mean) / std
    return Window(
        parent_id=w.parent_id,
        start_index=w.start_index,
        values=vals,
        labels=w.labels.copy(),
        normalized=True,
    )
