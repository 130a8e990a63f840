"""Supervision by exhaustive sweep: run every combo, keep the best.

For each labeled window the sweep scores all grid combinations and the
winner becomes the training label pair (which detector, which of its
parameter combos). Windows without any true anomaly are kept and scored
by how quiet a combo stays on them, so the classifier also learns to
pick non-alarming configurations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ConfusionCounts,
    TimeSeries,
    Window,
    compute_metrics,
    normalize_window,
    score_mask,
    slide_windows,
)
from .detectors import ComboRef, ParamGrid, enumerate_combos, run_detector


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class ComboScore:
    """How one combo fared on one window."""

    combo_index: int
    detector_class: int
    param_index: int
    counts: ConfusionCounts
    window_score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.window_score <= 1.0):
            raise OracleError(f"window_score {self.window_score} outside [0,1]")


@dataclass(frozen=True)
class SupervisedExample:
    """One training example: normalized input plus oracle labels.

    `raw_window` keeps the original values so the winning combo can be
    re-run for verification; detectors consume raw values, the network
    consumes the normalized ones.
    """

    window: Window
    raw_window: Window
    detector_label: int
    param_label: int
    provenance: ComboScore


def _window_score(counts: ConfusionCounts, has_anomaly: bool) -> float:
    if has_anomaly:
        return compute_metrics(counts).f1
    # Quiet-window rule: reward configs that do not alarm.
    return 1.0 / (1.0 + counts.fp)


def sweep_window(
    w: Window,
    grids: Sequence[ParamGrid],
    context: Sequence[Window] = (),
    combos: Sequence[ComboRef] | None = None,
) -> list[ComboScore]:
    """Score every combo on one labeled window.

    `context` carries the earlier windows of the same series for the
    history-aware detectors. Passing a prebuilt combo enumeration avoids
    re-deriving it for every window of a corpus.
    """
    if combos is None:
        combos = enumerate_combos(grids)
    has_anomaly = bool(np.any(w.labels == 1))
    scores = []
    for ref in combos:
        result = run_detector(ref.config, w, context=context)
        counts = score_mask(result.mask, w.labels)
        scores.append(
            ComboScore(
                combo_index=ref.combo_index,
                detector_class=ref.detector_index,
                param_index=ref.param_index,
                counts=counts,
                window_score=_window_score(counts, has_anomaly),
            )
        )
    return scores


def select_best(scores: Sequence[ComboScore]) -> ComboScore:
    """Deterministic argmax: score, then lower error metric, then lower index.

    The combo index only breaks exact ties, so the selection does not
    depend on the order the scores arrive in.
    """
    if not scores:
        raise OracleError("select_best needs at least one score")
    def key(s: ComboScore) -> tuple[float, float, int]:
        return (-s.window_score, compute_metrics(s.counts).error, s.combo_index)
    return min(scores, key=key)


def label_window(
    w: Window, grids: Sequence[ParamGrid], context: Sequence[Window] = (),
    combos: Sequence[ComboRef] | None = None,
) -> SupervisedExample:
    best = select_best(sweep_window(w, grids, context=context, combos=combos))
    return SupervisedExample(
        window=normalize_window(w),
        raw_window=w,
        detector_label=best.detector_class,
        param_label=best.param_index,
        provenance=best,
    )


def build_dataset(
    series: Sequence[TimeSeries],
    window_size: int,
    stride: int,
    grids: Sequence[ParamGrid],
) -> list[SupervisedExample]:
    """Windows -> sweep -> best labels, in deterministic series order."""
    combos = enumerate_combos(grids)
    examples = []
    for s in series:
        windows = slide_windows(s, window_size, stride)
        for i, w in enumerate(windows):
            examples.append(
                label_window(w, grids, context=windows[:i], combos=combos)
            )
    return examples


def class_counts(
    examples: Sequence[SupervisedExample], num_detectors: int
) -> list[int]:
    """Per-detector label counts, for imbalance reporting."""
    counts = [0] * num_detectors
    for ex in examples:
        counts[ex.detector_label] += 1
    return counts
