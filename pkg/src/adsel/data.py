"""Synthetic corpora, file ingestion, and dataset persistence.

The generator fabricates labeled series for the five anomaly shapes over
three base signals. Constants in `default_corpus` are tuned so that each
anomaly shape is cleanly detectable by its natural detector family while
no single parameter combination handles all of them; that tension is what
makes per-window selection worth learning.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TimeSeries, Window, normalize_window
from .detectors import ParamGrid, grid_fingerprint
from .oracle import ComboScore, SupervisedExample
from .core import ConfusionCounts

ANOMALY_TYPES = ("outlier", "mean_shift", "cliff", "deviating_trend", "new_shape")
BASES = ("sine", "trend", "noise")

DATASET_FORMAT_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalySpec:
    """One injected anomaly: what, how strong, where, how long.

    `position` is a fraction of the series length; `duration` is in
    points. Outliers are single points by definition.
    """

    type: str
    magnitude: float
    position: float
    duration: int

    def __post_init__(self) -> None:
        if self.type not in ANOMALY_TYPES:
            raise DataError(f"unknown anomaly type {self.type!r}")
        if not (0.0 < self.position < 1.0):
            raise DataError("position must be a fraction in (0, 1)")
        if self.duration < 1:
            raise DataError("duration must be >= 1 point")
        if self.type == "outlier" and self.duration != 1:
            raise DataError("outlier anomalies are single points (duration 1)")

    def span(self, length: int) -> tuple[int, int]:
        start = int(round(self.position * length))
        stop = start + self.duration
        if stop > length:
            raise DataError(
                f"{self.type} at position {self.position} with duration "
                f"{self.duration} overruns series of length {length}"
            )
        return start, stop


def _base_signal(base: str, length: int, params: dict) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    if base == "sine":
        amplitude = params.get("amplitude", 1.0)
        period = params.get("period", 24)
        phase = params.get("phase", 0.0)
        return amplitude * np.sin(2.0 * np.pi * t / period + phase)
    if base == "trend":
        slope = params.get("slope", 0.01)
        intercept = params.get("intercept", 0.0)
        return intercept + slope * t
    if base == "noise":
        return np.zeros(length)
    raise DataError(f"unknown base {base!r}")


def _inject(
    values: np.ndarray,
    labels: np.ndarray,
    spec: AnomalySpec,
    base: str,
    params: dict,
    signal_sigma: float,
) -> None:
    start, stop = spec.span(len(values))
    if spec.type == "outlier":
        values[start] += spec.magnitude * signal_sigma
    elif spec.type == "mean_shift":
        values[start:stop] += spec.magnitude
    elif spec.type == "cliff":
        values[start:stop] += spec.magnitude
    elif spec.type == "deviating_trend":
        # Smooth divergence-and-return: a half-sine bump peaking at
        # `magnitude`, so the labeled span has few near-zero deviations.
        t = np.arange(spec.duration, dtype=np.float64)
        values[start:stop] += spec.magnitude * np.sin(np.pi * (t + 0.5) / spec.duration)
    elif spec.type == "new_shape":
        if base == "sine":
            # Same amplitude, different rhythm: magnitude is the frequency
            # ratio of the replacement wave (2.0 doubles, 0.5 halves).
            period = params.get("period", 24)
            amplitude = params.get("amplitude", 1.0)
            phase = params.get("phase", 0.0)
            t = np.arange(start, stop, dtype=np.float64)
            ratio = spec.magnitude
            values[start:stop] = amplitude * np.sin(2.0 * np.pi * ratio * t / period + phase)
        else:
            values[start:stop] = -values[start:stop]
    labels[start:stop] = 1


def generate_synthetic(
    n_series: int,
    length: int,
    base: str,
    anomalies: Sequence[AnomalySpec],
    seed: int,
    noise_sigma: float = 0.1,
    base_params: dict | None = None,
    id_prefix: str | None = None,
) -> list[TimeSeries]:
    """Deterministic labeled series: base shape + anomalies + Gaussian noise.

    All series in one call share the base and anomaly placement; only the
    noise differs. Anomaly spans must not overlap.
    """
    if n_series < 1:
        raise DataError("n_series must be >= 1")
    params = dict(base_params or {})
    spans = sorted(spec.span(length) for spec in anomalies)
    for (_, prev_stop), (next_start, _) in zip(spans, spans[1:]):
        if next_start < prev_stop:
            raise DataError("anomaly spans overlap")
    clean = _base_signal(base, length, params)
    # Deterministic anomaly scale: base variance plus the configured noise.
    signal_sigma = math.sqrt(float(np.var(clean)) + noise_sigma**2)
    rng = np.random.default_rng(seed)
    prefix = id_prefix if id_prefix is not None else base
    out = []
    for i in range(n_series):
        values = clean.copy()
        labels = np.zeros(length, dtype=np.int8)
        for spec in anomalies:
            _inject(values, labels, spec, base, params, signal_sigma)
        values = values + rng.normal(0.0, noise_sigma, size=length)
        out.append(
            TimeSeries(
                id=f"{prefix}-{seed}-{i:03d}",
                timestamps=60 * np.arange(length, dtype=np.int64),
                values=values,
                labels=labels,
            )
        )
    return out


def default_corpus(seed: int = 42, scale: float = 1.0) -> list[TimeSeries]:
    """The mixed benchmark corpus used throughout the experiment suite.

    Composition (at scale 1, window 200 / stride 100 -> 239 windows):
      - 25 outlier series: flat noise with an 8-sigma spike,
      - 25 mean-shift series: flat noise with a short sustained offset,
      - 25 cliff series: flat noise stepping to a new level at 3/4,
      - 25 deviating-trend series: daily-ish sine with a smooth bump whose
        values stay inside the sine's value range (a density scan cannot
        isolate them, a seasonal decomposition can),
      - 25 new-shape series (length 400): very slow wave (period 440)
        whose back half runs at doubled frequency. The base must vary
        slowly: a banded warp alignment is value-limited only when the
        reference drifts less than the band width per step, and the
        doubled wave must antialign with itself across the stride, which
        together make the shape detector the one family that sees this
        anomaly,
      - 16 clean flat series and 16 clean slow-wave series (length 400,
        period 160; their window-to-window phase drift is deliberate bait
        for fixed shape-comparison configs).
    Positions vary across small groups, and the slow-wave groups vary in
    phase, so neither anomaly location nor template identity is a
    learnable constant.
    """
    def n(x: int) -> int:
        return max(1, int(round(x * scale)))

    series: list[TimeSeries] = []
    child = 0

    def subseed() -> int:
        nonlocal child
        child += 1
        return seed * 10_000 + child

    flat = dict(base="noise", noise_sigma=0.15)
    sine24 = dict(base="sine", noise_sigma=0.05, base_params={"amplitude": 1.0, "period": 24})

    for pos in (0.2, 0.35, 0.5, 0.65, 0.8):
        series += generate_synthetic(
            n(5), 200, anomalies=[AnomalySpec("outlier", 8.0, pos, 1)],
            seed=subseed(), id_prefix="outlier", **flat,
        )
    for pos in (0.3, 0.45, 0.6, 0.75, 0.9):
        series += generate_synthetic(
            n(5), 200, anomalies=[AnomalySpec("mean_shift", 2.5, pos, 8)],
            seed=subseed(), id_prefix="mean_shift", **flat,
        )
    for pos, dur in ((0.7, 60), (0.75, 50), (0.8, 40)):
        series += generate_synthetic(
            n(8 if pos != 0.75 else 9), 200,
            anomalies=[AnomalySpec("cliff", 3.0, pos, dur)],
            seed=subseed(), id_prefix="cliff", **flat,
        )
    for pos in (0.3, 0.45, 0.6, 0.75, 0.9):
        series += generate_synthetic(
            n(5), 200, anomalies=[AnomalySpec("deviating_trend", 1.8, pos, 8)],
            seed=subseed(), id_prefix="deviating_trend", **sine24,
        )
    for k in range(5):
        series += generate_synthetic(
            n(5), 400, anomalies=[AnomalySpec("new_shape", 2.0, 0.5, 200)],
            seed=subseed(), id_prefix="new_shape", base="sine", noise_sigma=0.05,
            base_params={"amplitude": 1.0, "period": 440, "phase": 0.4 * math.pi * k},
        )
    series += generate_synthetic(
        n(16), 200, anomalies=[], seed=subseed(), id_prefix="clean_flat", **flat,
    )
    for k in range(4):
        series += generate_synthetic(
            n(4), 400, anomalies=[], seed=subseed(), id_prefix="clean_slow",
            base="sine", noise_sigma=0.05,
            base_params={"amplitude": 1.0, "period": 160, "phase": 0.5 * math.pi * k},
        )
    return series


def series_type(series_id: str) -> str:
    """The corpus tags every series id with its group prefix."""
    return series_id.rsplit("-", 2)[0]


# --- transfer-learning source corpus --------------------------------------


def make_classification_source(
    n_per_class: int,
    length: int,
    seed: int,
    classes: Sequence[str] = ("sine", "square"),
    noise_sigma: float = 0.1,
) -> list[tuple[int, np.ndarray]]:
    """Separable shape-classification examples in UCR spirit.

    Class shapes: sine / square / fast_sine / slow_sine / flat. Labels are
    1-based like the UCR archive files.
    """
    shapes = {
        "sine": lambda t: np.sin(2 * np.pi * t / 24),
        "square": lambda t: np.sign(np.sin(2 * np.pi * t / 24)),
        "fast_sine": lambda t: np.sin(2 * np.pi * t / 12),
        "slow_sine": lambda t: np.sin(2 * np.pi * t / 160),
        "flat": lambda t: np.zeros(len(t)),
    }
    for c in classes:
        if c not in shapes:
            raise DataError(f"unknown source class {c!r}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    out = []
    for label, name in enumerate(classes, start=1):
        for _ in range(n_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            shifted = t + phase * 24 / (2 * np.pi)
            values = shapes[name](shifted) + rng.normal(0, noise_sigma, size=length)
            out.append((label, values))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


# --- file formats ----------------------------------------------------------


def read_s5(path: str | Path) -> TimeSeries:
    """CSV with timestamp/value/is_anomaly columns in any order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        required = {"timestamp", "value", "is_anomaly"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        timestamps, values, labels = [], [], []
        for row_no, row in enumerate(reader, start=2):
            try:
                timestamps.append(int(row["timestamp"]))
                values.append(float(row["value"]))
                flag = int(row["is_anomaly"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from exc
            if flag not in (0, 1):
                raise DataError(f"{path}: row {row_no}: is_anomaly={flag} not binary")
            labels.append(flag)
    ts = np.asarray(timestamps, dtype=np.int64)
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        raise DataError(f"{path}: timestamps not strictly increasing")
    return TimeSeries(
        id=path.stem,
        timestamps=ts,
        values=np.asarray(values, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int8),
    )


def write_s5(series: TimeSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value", "is_anomaly"])
        for ts, v, lab in zip(series.timestamps, series.values, series.labels):
            writer.writerow([int(ts), repr(float(v)), int(lab)])


def read_ucr(path: str | Path) -> list[tuple[int, np.ndarray]]:
    """Delimited text, first field = integer class label."""
    path = Path(path)
    out = []
    width = None
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.replace(",", " ").split()
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise DataError(
                f"{path}: line {line_no} has {len(fields)} fields, expected {width}"
            )
        try:
            label = int(float(fields[0]))
            values = np.asarray([float(f) for f in fields[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: line {line_no}: {exc}") from exc
        out.append((label, values))
    if not out:
        raise DataError(f"{path}: no examples")
    return out


def write_ucr(examples: Sequence[tuple[int, np.ndarray]], path: str | Path) -> None:
    lines = []
    for label, values in examples:
        lines.append(",".join([str(int(label))] + [repr(float(v)) for v in values]))
    Path(path).write_text("\n".join(lines) + "\n")


# --- labeled-dataset directory ---------------------------------------------

_EXAMPLE_COLUMNS = [
    "window_id",
    "detector_label",
    "param_label",
    "window_score",
    "combo_index",
    "tp",
    "fp",
    "fn",
    "tn",
]


def save_dataset(
    examples: Sequence[SupervisedExample],
    grids: Sequence[ParamGrid],
    directory: str | Path,
) -> None:
    """Write examples.csv + windows.f64 + labels.u8 + meta.json.

    The binary files hold raw window values and per-point truth labels in
    example order, so provenance can be re-verified after a round trip.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not examples:
        raise DataError("refusing to save an empty dataset")
    width = examples[0].raw_window.length
    with (directory / "examples.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EXAMPLE_COLUMNS)
        for ex in examples:
            if ex.raw_window.length != width:
                raise DataError("mixed window sizes in one dataset")
            prov = ex.provenance
            writer.writerow(
                [
                    f"{ex.raw_window.parent_id}@{ex.raw_window.start_index}",
                    ex.detector_label,
                    ex.param_label,
                    repr(ex.provenance.window_score),
                    prov.combo_index,
                    prov.counts.tp,
                    prov.counts.fp,
                    prov.counts.fn,
                    prov.counts.tn,
                ]
            )
    values = np.stack([ex.raw_window.values for ex in examples]).astype("<f8")
    (directory / "windows.f64").write_bytes(values.tobytes())
    labels = np.stack([ex.raw_window.labels for ex in examples]).astype(np.uint8)
    (directory / "labels.u8").write_bytes(labels.tobytes())
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "example_count": len(examples),
        "window_size": width,
        "grid_fingerprint": grid_fingerprint(grids),
        "normalization": "per_window_zscore",
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ": "), indent=1) + "\n"
    )


def load_dataset(
    directory: str | Path, grids: Sequence[ParamGrid] | None = None
) -> list[SupervisedExample]:
    """Read a dataset directory back into supervised examples.

    When grids are given, the stored fingerprint must match: labels are
    indices into a specific combo table and are meaningless against any
    other grid.
    """
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    if meta["format_version"] != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported dataset format {meta['format_version']}")
    if grids is not None:
        want = grid_fingerprint(grids)
        if meta["grid_fingerprint"] != want:
            raise DataError(
                "dataset was labeled with a different grid "
                f"({meta['grid_fingerprint'][:12]}.. != {want[:12]}..)"
            )
    count, width = meta["example_count"], meta["window_size"]
    values = np.frombuffer((directory / "windows.f64").read_bytes(), dtype="<f8")
    labels = np.frombuffer((directory / "labels.u8").read_bytes(), dtype=np.uint8)
    if len(values) != count * width or len(labels) != count * width:
        raise DataError("binary payload size disagrees with meta.json")
    values = values.reshape(count, width)
    labels = labels.reshape(count, width).astype(np.int8)
    examples = []
    with (directory / "examples.csv").open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _EXAMPLE_COLUMNS:
            raise DataError("examples.csv columns do not match the documented order")
        for i, row in enumerate(reader):
            parent_id, _, start = row["window_id"].rpartition("@")
            raw = Window(
                parent_id=parent_id,
                start_index=int(start),
                values=values[i].copy(),
                labels=labels[i].copy(),
            )
            counts = ConfusionCounts(
                tp=int(row["tp"]), fp=int(row["fp"]), fn=int(row["fn"]), tn=int(row["tn"])
            )
            prov = ComboScore(
                combo_index=int(row["combo_index"]),
                detector_class=int(row["detector_label"]),
                param_index=int(row["param_label"]),
                counts=counts,
                window_score=float(row["window_score"]),
            )
            examples.append(
                SupervisedExample(
                    window=normalize_window(raw),
                    raw_window=raw,
                    detector_label=int(row["detector_label"]),
                    param_label=int(row["param_label"]),
                    provenance=prov,
                )
            )
    if len(examples) != count:
        raise DataError("examples.csv row count disagrees with meta.json")
    return examples
