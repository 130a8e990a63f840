"""The candidate detector pool: pure functions from (window, parameters) to masks.

Eight detector kinds are implemented; the default parameter grid activates
five of them (29 combos total). Every detector is deterministic and leaves
its inputs untouched, so the oracle sweep can fan out freely.

Conventions shared by all detectors:
  - input windows carry raw (unnormalized) values; detectors that need
    scale-free statistics standardize internally,
  - each returns a DetectionResult whose mask has exactly window length,
  - threshold comparisons are strict (boundary values pass as normal).
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import AnomalyMask, Window, normalize_window


class DetectorError(ValueError):
    """Raised for invalid detector parameters or malformed configs."""


class DetectorKind(enum.Enum):
    """Registry of detector kinds. Definition order is the stable class order."""

    KSigma = "KSigma"
    SimpleThreshold = "SimpleThreshold"
    DbscanOutlier = "DbscanOutlier"
    LofOutlier = "LofOutlier"
    KernelDensity = "KernelDensity"
    CusumChangePoint = "CusumChangePoint"
    StlResidual = "StlResidual"
    DtwShape = "DtwShape"


REGISTRY = tuple(DetectorKind)

# Per-kind parameter schema: name -> (low, high, must_be_integer).
# Bounds are inclusive. Configs must carry exactly these names.
PARAM_SCHEMAS: dict[DetectorKind, dict[str, tuple[float, float, bool]]] = {
    DetectorKind.KSigma: {"k": (1e-6, 100.0, False)},
    DetectorKind.SimpleThreshold: {
        "upper": (-1e12, 1e12, False),
        "lower": (-1e12, 1e12, False),
    },
    DetectorKind.DbscanOutlier: {
        "eps": (1e-9, 1e12, False),
        "min_pts": (1, 10_000, True),
    },
    DetectorKind.LofOutlier: {
        "k": (1, 10_000, True),
        "lof_threshold": (1.0 + 1e-9, 1e6, False),
    },
    DetectorKind.KernelDensity: {
        "bandwidth": (1e-9, 1e12, False),
        "density_quantile": (1e-9, 1.0 - 1e-9, False),
        "changepoint": (0, 1, True),
    },
    DetectorKind.CusumChangePoint: {
        "h": (1e-6, 1e6, False),
        "drift": (0.0, 1e6, False),
    },
    DetectorKind.StlResidual: {
        "period": (2, 100_000, True),
        "residual_k": (1e-6, 1e6, False),
    },
    DetectorKind.DtwShape: {
        "radius": (1, 100_000, True),
        "dist_threshold": (1e-9, 1e6, False),
    },
}

# Parameters divided by `sensitivity` at dispatch time: higher sensitivity
# (toward 1) keeps the configured threshold, lower values relax it.
_SENSITIVITY_TARGET: dict[DetectorKind, str] = {
    DetectorKind.KSigma: "k",
    DetectorKind.LofOutlier: "lof_threshold",
    DetectorKind.CusumChangePoint: "h",
    DetectorKind.StlResidual: "residual_k",
    DetectorKind.DtwShape: "dist_threshold",
}


@dataclass(frozen=True)
class DetectorConfig:
    """One runnable (detector kind, parameter values) combination.

    `params` is an ordered tuple of (name, value) pairs so that configs are
    hashable and serialize identically across runs. `history_count` and
    `sensitivity` are common run-time knobs every kind accepts.
    """

    kind: DetectorKind
    params: tuple[tuple[str, float], ...]
    history_count: int = 1
    sensitivity: float = 1.0

    def __post_init__(self) -> None:
        schema = PARAM_SCHEMAS[self.kind]
        names = [name for name, _ in self.params]
        if sorted(names) != sorted(schema):
            raise DetectorError(
                f"{self.kind.value}: params {names} do not match schema "
                f"{sorted(schema)}"
            )
        for name, value in self.params:
            low, high, integral = schema[name]
            if not (low <= value <= high):
                raise DetectorError(
                    f"{self.kind.value}.{name}={value} outside [{low}, {high}]"
                )
            if integral and value != int(value):
                raise DetectorError(f"{self.kind.value}.{name}={value} must be integral")
        if self.history_count < 1:
            raise DetectorError("history_count must be >= 1")
        if not (0.0 < self.sensitivity <= 1.0):
            raise DetectorError("sensitivity must be in (0, 1]")

    def as_dict(self) -> dict[str, float]:
        return dict(self.params)

    def value(self, name: str) -> float:
        for key, v in self.params:
            if key == name:
                return v
        raise KeyError(name)

    def label(self) -> str:
        inner = ",".join(f"{n}={v:g}" for n, v in self.params)
        return f"{self.kind.value}({inner})"


@dataclass(frozen=True)
class ParamGrid:
    """Cross-product of candidate values for one detector kind."""

    kind: DetectorKind
    axes: tuple[tuple[str, tuple[float, ...]], ...]
    combos: tuple[DetectorConfig, ...]

    def __post_init__(self) -> None:
        expected = 1
        for _, values in self.axes:
            expected *= len(values)
        if len(self.combos) != expected:
            raise DetectorError(
                f"{self.kind.value}: {len(self.combos)} combos for "
                f"{expected}-element cross product"
            )

    @classmethod
    def from_axes(
        cls, kind: DetectorKind, axes: Sequence[tuple[str, Sequence[float]]]
    ) -> "ParamGrid":
        """Materialize the lexicographic cross product (later axes fastest)."""
        frozen_axes = tuple((name, tuple(values)) for name, values in axes)
        names = [name for name, _ in frozen_axes]
        combos = []
        for values in itertools.product(*(vals for _, vals in frozen_axes)):
            combos.append(DetectorConfig(kind=kind, params=tuple(zip(names, values))))
        return cls(kind=kind, axes=frozen_axes, combos=tuple(combos))


@dataclass(frozen=True)
class DetectionResult:
    """Mask plus an optional per-point detector statistic."""

    mask: AnomalyMask
    score_trace: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.score_trace is not None:
            trace = np.asarray(self.score_trace, dtype=np.float64)
            if len(trace) != len(self.mask):
                raise DetectorError("score_trace length differs from mask length")
            object.__setattr__(self, "score_trace", trace)


def _result(flags: np.ndarray, trace: np.ndarray | None = None) -> DetectionResult:
    return DetectionResult(mask=AnomalyMask(flags.astype(np.int8)), score_trace=trace)


# --- individual detectors -------------------------------------------------


def ksigma_detect(w: Window, k: float, history: Sequence[Window] = ()) -> DetectionResult:
    """Flag points farther than k standard deviations from the mean.

    Statistics come from the current window pooled with any supplied
    history windows; flags are emitted for the current window only.
    """
    if k <= 0:
        raise DetectorError("k must be positive")
    pool = np.concatenate([h.values for h in history] + [w.values]) if history else w.values
    mean = float(np.mean(pool))
    std = float(np.std(pool))
    if std == 0.0:
        return _result(np.zeros(len(w), dtype=np.int8))
    z = np.abs(w.values - mean) / std
    return _result((z > k).astype(np.int8), trace=z)


def threshold_detect(w: Window, upper: float, lower: float) -> DetectionResult:
    if lower > upper:
        raise DetectorError(f"lower {lower} exceeds upper {upper}")
    flags = (w.values > upper) | (w.values < lower)
    return _result(flags.astype(np.int8))


def dbscan_detect(w: Window, eps: float, min_pts: int) -> DetectionResult:
    """1-D DBSCAN over values; noise points are the anomalies.

    Neighborhood counts include the point itself. A non-core point within
    eps of some core point is border (not flagged); everything else
    outside a cluster is noise.
    """
    if eps <= 0:
        raise DetectorError("eps must be positive")
    if min_pts < 1:
        raise DetectorError("min_pts must be >= 1")
    values = w.values
    order = np.argsort(values, kind="stable")
    sv = values[order]
    lo = np.searchsorted(sv, sv - eps, side="left")
    hi = np.searchsorted(sv, sv + eps, side="right")
    core = (hi - lo) >= min_pts
    noise_sorted = np.zeros(len(sv), dtype=bool)
    if not core.all():
        cv = sv[core]
        if len(cv) == 0:
            noise_sorted = ~core
        else:
            # Distance from each non-core point to the nearest core value.
            pos = np.searchsorted(cv, sv)
            left = np.where(pos > 0, np.abs(sv - cv[np.maximum(pos - 1, 0)]), np.inf)
            right = np.where(pos < len(cv), np.abs(cv[np.minimum(pos, len(cv) - 1)] - sv), np.inf)
            nearest = np.minimum(left, right)
            noise_sorted = ~core & (nearest > eps)
    flags = np.zeros(len(values), dtype=np.int8)
    flags[order[noise_sorted]] = 1
    return _result(flags)


def lof_detect(w: Window, k: int, lof_threshold: float) -> DetectionResult:
    """Classical local outlier factor on 1-D values.

    Neighborhoods include every point tied at the k-distance. Zero-spread
    neighborhoods are clamped so duplicate clusters score 1, not inf/inf.
    """
    n = len(w)
    if k >= n:
        raise DetectorError(f"k={k} must be smaller than window length {n}")
    if k < 1:
        raise DetectorError("k must be >= 1")
    values = w.values
    dist = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(dist, np.inf)
    kdist = np.partition(dist, k - 1, axis=1)[:, k - 1]
    neighbor = dist <= kdist[:, None]  # all points tied at k-distance included
    reach = np.where(neighbor, np.maximum(kdist[None, :], dist), 0.0)
    counts = neighbor.sum(axis=1)
    mean_reach = reach.sum(axis=1) / counts
    mean_reach = np.maximum(mean_reach, 1e-12)
    inv_reach = 1.0 / mean_reach
    lof = mean_reach * (neighbor @ inv_reach) / counts
    return _result((lof > lof_threshold).astype(np.int8), trace=lof)


def kde_detect(
    w: Window, bandwidth: float, density_quantile: float, mode: str = "outlier"
) -> DetectionResult:
    """Gaussian kernel density scoring in two modes.

    outlier: flag points whose in-window density falls strictly below the
    requested quantile of all in-window densities.
    changepoint: fit the density on the first half only and flag
    second-half points that are implausible under it, using the quantile
    of the first half's self-densities as the bar.
    """
    if bandwidth <= 0:
        raise DetectorError("bandwidth must be positive")
    if not (0.0 < density_quantile < 1.0):
        raise DetectorError("density_quantile must be in (0, 1)")
    if mode not in ("outlier", "changepoint"):
        raise DetectorError(f"unknown kde mode {mode!r}")
    values = w.values
    n = len(values)

    def density(points: np.ndarray, sample: np.ndarray) -> np.ndarray:
        z = (points[:, None] - sample[None, :]) / bandwidth
        kern = np.exp(-0.5 * z * z)
        return kern.sum(axis=1) / (len(sample) * bandwidth * np.sqrt(2.0 * np.pi))

    flags = np.zeros(n, dtype=np.int8)
    if mode == "outlier":
        dens = density(values, values)
        bar = np.quantile(dens, density_quantile)
        flags[dens < bar] = 1
        return _result(flags, trace=dens)
    half = n // 2
    first, second = values[:half], values[half:]
    self_dens = density(first, first)
    bar = np.quantile(self_dens, density_quantile)
    second_dens = density(second, first)
    flags[half:][second_dens < bar] = 1
    trace = np.concatenate([self_dens, second_dens])
    return _result(flags, trace=trace)


def cusum_detect(w: Window, h: float, drift: float) -> DetectionResult:
    """Two-sided cumulative-sum change detection on standardized values.

    Either accumulator crossing h flags the point and resets; the other
    side keeps its state, so opposite-direction evidence is preserved.
    """
    if h <= 0:
        raise DetectorError("h must be positive")
    if drift < 0:
        raise DetectorError("drift must be nonnegative")
    values = w.values
    mean = float(np.mean(values))
    std = float(np.std(values))
    n = len(values)
    flags = np.zeros(n, dtype=np.int8)
    trace = np.zeros(n, dtype=np.float64)
    if std < 1e-8:
        return _result(flags, trace=trace)
    z = (values - mean) / std
    s_pos = 0.0
    s_neg = 0.0
    for i in range(n):
        s_pos = max(0.0, s_pos + z[i] - drift)
        s_neg = max(0.0, s_neg - z[i] - drift)
        trace[i] = max(s_pos, s_neg)
        if s_pos > h:
            flags[i] = 1
            s_pos = 0.0
        if s_neg > h:
            flags[i] = 1
            s_neg = 0.0
    return _result(flags, trace=trace)


def _ma_trend(values: np.ndarray, period: int) -> np.ndarray:
    """Centered moving average, linearly extrapolated into the edges.

    The interior is the exact `period`-point mean; edges continue the
    first/last interior slope, which reproduces the interior exactly for
    constant, linear, and integer-period periodic inputs.
    """
    n = len(values)
    valid = np.convolve(values, np.full(period, 1.0 / period), mode="valid")
    trend = np.empty(n, dtype=np.float64)
    start = (period - 1) // 2  # left-centered for even periods
    stop = start + len(valid)
    trend[start:stop] = valid
    if len(valid) >= 2:
        left_slope = valid[1] - valid[0]
        right_slope = valid[-1] - valid[-2]
    else:
        left_slope = right_slope = 0.0
    for i in range(start - 1, -1, -1):
        trend[i] = trend[i + 1] - left_slope
    for i in range(stop, n):
        trend[i] = trend[i - 1] + right_slope
    return trend


def stl_detect(w: Window, period: int, residual_k: float) -> DetectionResult:
    """Trend + seasonal + residual split; flag large residuals.

    Trend is a centered moving average, seasonal is the per-phase mean of
    the detrended values. A near-zero residual spread means the window is
    fully explained and nothing is flagged.
    """
    n = len(w)
    if 2 * period > n:
        raise DetectorError(f"2*period={2 * period} exceeds window length {n}")
    if residual_k <= 0:
        raise DetectorError("residual_k must be positive")
    values = w.values
    trend = _ma_trend(values, period)
    detrended = values - trend
    seasonal = np.zeros(n, dtype=np.float64)
    for phase in range(period):
        idx = np.arange(phase, n, period)
        seasonal[idx] = detrended[idx].mean()
    residual = detrended - seasonal
    sigma = float(np.std(residual))
    if sigma < 1e-9:
        return _result(np.zeros(n, dtype=np.int8), trace=np.zeros(n))
    scaled = np.abs(residual) / sigma
    return _result((scaled > residual_k).astype(np.int8), trace=scaled)


@lru_cache(maxsize=4096)
def _dtw_distance_cached(a_bytes: bytes, b_bytes: bytes, n: int, radius: int) -> float:
    a = np.frombuffer(a_bytes, dtype=np.float64)
    b = np.frombuffer(b_bytes, dtype=np.float64)
    big = np.inf
    prev = np.full(n + 1, big)
    prev[0] = 0.0
    cur = np.empty(n + 1)
    for i in range(1, n + 1):
        cur[:] = big
        j_lo = max(1, i - radius)
        j_hi = min(n, i + radius)
        ai = a[i - 1]
        for j in range(j_lo, j_hi + 1):
            best = min(prev[j], prev[j - 1], cur[j - 1])
            cur[j] = abs(ai - b[j - 1]) + best
        prev, cur = cur, prev
    return float(prev[n])


def dtw_banded_distance(a: np.ndarray, b: np.ndarray, radius: int) -> float:
    """Dynamic-time-warping distance constrained to |i-j| <= radius."""
    if len(a) != len(b):
        raise DetectorError("sequences must have equal length")
    if radius < 1:
        raise DetectorError("radius must be >= 1")
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _dtw_distance_cached(a.tobytes(), b.tobytes(), len(a), int(radius))


def dtw_detect(
    w: Window, reference: Window, radius: int, dist_threshold: float
) -> DetectionResult:
    """Flag the whole window when its shape strays from the reference.

    Both windows are z-normalized first so only shape matters. The
    banded alignment cost is averaged per point before thresholding;
    a shape anomaly is a property of the window, not of single points.
    """
    if len(reference) != len(w):
        raise DetectorError(
            f"reference length {len(reference)} differs from window length {len(w)}"
        )
    a = normalize_window(w).values
    b = normalize_window(reference).values
    distance = dtw_banded_distance(a, b, radius) / len(w)
    if distance > dist_threshold:
        return _result(np.ones(len(w), dtype=np.int8))
    return _result(np.zeros(len(w), dtype=np.int8))


# --- dispatch and grids ---------------------------------------------------


def _scaled(config: DetectorConfig) -> dict[str, float]:
    params = config.as_dict()
    target = _SENSITIVITY_TARGET.get(config.kind)
    if target is not None and config.sensitivity != 1.0:
        params[target] = params[target] / config.sensitivity
    return params


def run_detector(
    config: DetectorConfig, w: Window, context: Sequence[Window] = ()
) -> DetectionResult:
    """Dispatch a config to its detector.

    `context` holds earlier windows of the same series, oldest first. It
    feeds the detectors with cross-window semantics: KSigma pools its
    statistics over the trailing `history_count` windows, and the shape
    detector compares against the window `history_count` steps back
    (falling back to the window itself when there is no history, which
    makes the first window of a series trivially normal).
    """
    p = _scaled(config)
    kind = config.kind
    if kind is DetectorKind.KSigma:
        history = tuple(context[-(config.history_count - 1):]) if config.history_count > 1 else ()
        return ksigma_detect(w, p["k"], history=history)
    if kind is DetectorKind.SimpleThreshold:
        return threshold_detect(w, p["upper"], p["lower"])
    if kind is DetectorKind.DbscanOutlier:
        return dbscan_detect(w, p["eps"], int(p["min_pts"]))
    if kind is DetectorKind.LofOutlier:
        return lof_detect(w, int(p["k"]), p["lof_threshold"])
    if kind is DetectorKind.KernelDensity:
        mode = "changepoint" if int(p["changepoint"]) else "outlier"
        return kde_detect(w, p["bandwidth"], p["density_quantile"], mode=mode)
    if kind is DetectorKind.CusumChangePoint:
        return cusum_detect(w, p["h"], p["drift"])
    if kind is DetectorKind.StlResidual:
        return stl_detect(w, int(p["period"]), p["residual_k"])
    if kind is DetectorKind.DtwShape:
        if context:
            reference = context[max(0, len(context) - config.history_count)]
        else:
            reference = w
        return dtw_detect(w, reference, int(p["radius"]), p["dist_threshold"])
    raise DetectorError(f"unhandled detector kind {kind!r}")


def default_grid() -> tuple[ParamGrid, ...]:
    """The fixed 29-combo default: five kinds, lexicographic combo order."""
    return (
        ParamGrid.from_axes(DetectorKind.KSigma, [("k", (2.0, 2.5, 3.0, 3.5, 4.0))]),
        ParamGrid.from_axes(
            DetectorKind.DbscanOutlier,
            [("eps", (0.3, 0.5, 0.8)), ("min_pts", (3, 5))],
        ),
        ParamGrid.from_axes(
            DetectorKind.CusumChangePoint,
            [("h", (4.0, 5.0)), ("drift", (0.0, 0.25, 0.5))],
        ),
        ParamGrid.from_axes(
            DetectorKind.StlResidual,
            [("residual_k", (2.0, 3.0)), ("period", (12, 24, 48))],
        ),
        ParamGrid.from_axes(
            DetectorKind.DtwShape,
            [("radius", (5, 10)), ("dist_threshold", (1.0, 2.0, 3.0))],
        ),
    )


@dataclass(frozen=True)
class ComboRef:
    """Global position of one combo inside a grid sequence."""

    combo_index: int
    detector_index: int
    param_index: int
    config: DetectorConfig


def enumerate_combos(grids: Sequence[ParamGrid]) -> tuple[ComboRef, ...]:
    out = []
    combo_index = 0
    for detector_index, grid in enumerate(grids):
        for param_index, config in enumerate(grid.combos):
            out.append(ComboRef(combo_index, detector_index, param_index, config))
            combo_index += 1
    return tuple(out)


def grid_fingerprint(grids: Sequence[ParamGrid]) -> str:
    """Stable digest of the full combo table; labels are only valid
    against the exact grid that produced them."""
    payload = [
        {
            "kind": grid.kind.value,
            "combos": [
                {
                    "params": list(map(list, c.params)),
                    "history_count": c.history_count,
                    "sensitivity": c.sensitivity,
                }
                for c in grid.combos
            ],
        }
        for grid in grids
    ]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def grids_from_override(doc: dict) -> tuple[ParamGrid, ...]:
    """Build grids from a JSON override document.

    Schema: {"<DetectorKind>": {"<param>": [values...], ...}, ...} with
    axes in schema order. Kind order follows the registry.
    """
    if not isinstance(doc, dict) or not doc:
        raise DetectorError("grid override must be a nonempty object")
    by_name = {kind.value: kind for kind in REGISTRY}
    grids = []
    for name in doc:
        if name not in by_name:
            raise DetectorError(f"unknown detector kind {name!r} in grid override")
    for kind in REGISTRY:
        if kind.value not in doc:
            continue
        axes_doc = doc[kind.value]
        schema = PARAM_SCHEMAS[kind]
        if sorted(axes_doc) != sorted(schema):
            raise DetectorError(
                f"grid override for {kind.value} must provide axes "
                f"{sorted(schema)}, got {sorted(axes_doc)}"
            )
        axes = [(name, tuple(axes_doc[name])) for name in schema]
        grids.append(ParamGrid.from_axes(kind, axes))
    return tuple(grids)
