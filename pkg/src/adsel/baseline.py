"""Majority-voting ensemble over fixed detector configs.

The comparison baseline: every config in the pool runs on the window and
the per-point votes are folded by one of three rules. No learning, no
per-window adaptation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import AnomalyMask, Window
from .detectors import (
    DetectionResult,
    DetectorConfig,
    DetectorError,
    ParamGrid,
    run_detector,
)

__all__ = [
    "BaselineError",
    "VOTE_RULES",
    "vote_detect",
    "default_vote_pool",
    "applicable_pool",
]

VOTE_RULES = ("absolute", "relative", "weighted")


class BaselineError(ValueError):
    pass


def default_vote_pool(grids: Sequence[ParamGrid]) -> tuple[DetectorConfig, ...]:
    """Every combo of the grid votes; the standard baseline pool."""
    return tuple(config for grid in grids for config in grid.combos)


def applicable_pool(
    configs: Sequence[DetectorConfig], window_size: int
) -> tuple[DetectorConfig, ...]:
    """Drop configs that cannot run on windows of the given length.

    Applicability here is length-driven (a seasonal decomposition needs
    at least two periods, for example), so probing each config once on a
    flat window of the target size settles it. A config that cannot
    produce output is not a voter.
    """
    if window_size < 1:
        raise BaselineError(f"window_size must be positive, got {window_size}")
    probe = Window(
        parent_id="applicability-probe",
        start_index=0,
        values=np.zeros(window_size),
        labels=np.zeros(window_size, dtype=np.int8),
    )
    kept = []
    for config in configs:
        try:
            run_detector(config, probe)
        except DetectorError:
            continue
        kept.append(config)
    if not kept:
        raise BaselineError(
            f"no config in the pool can run on windows of length {window_size}"
        )
    return tuple(kept)


def vote_detect(
    w: Window,
    configs: Sequence[DetectorConfig],
    rule: str = "absolute",
    weights: Sequence[float] | None = None,
    context: Sequence[Window] = (),
) -> DetectionResult:
    """Run every config on the window and fold the votes per point.

    absolute: flag where more than half of the configs flag.
    relative: flag where the vote count ties the window's maximum, if
              that maximum is nonzero.
    weighted: flag where the weighted vote exceeds half the total weight.
    """
    if not configs:
        raise BaselineError("vote_detect needs at least one config")
    if rule not in VOTE_RULES:
        raise BaselineError(f"rule must be one of {VOTE_RULES}, got {rule!r}")
    if rule != "weighted" and weights is not None:
        raise BaselineError("weights only apply to the weighted rule")

    votes = np.stack(
        [run_detector(c, w, context=context).mask.flags for c in configs]
    ).astype(np.float64)
    counts = votes.sum(axis=0)

    if rule == "absolute":
        flags = counts > len(configs) / 2.0
    elif rule == "relative":
        top = counts.max()
        flags = (counts >= top) & (counts > 0) if top > 0 else np.zeros_like(counts, bool)
    else:
        if weights is None:
            raise BaselineError("weighted rule needs weights")
        weight_arr = np.asarray(weights, dtype=np.float64)
        if weight_arr.shape != (len(configs),):
            raise BaselineError(
                f"need {len(configs)} weights, got shape {weight_arr.shape}"
            )
        if not np.all(np.isfinite(weight_arr)) or (weight_arr < 0).any():
            raise BaselineError("weights must be finite and nonnegative")
        total = float(weight_arr.sum())
        if total <= 0:
            raise BaselineError("weights must not sum to zero")
        flags = (weight_arr @ votes) > total / 2.0

    return DetectionResult(mask=AnomalyMask(flags.astype(np.int8)))
