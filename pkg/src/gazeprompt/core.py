"""Gaze data model, dataset adapters and temporal windowing.

A :class:`GazeTrace` stores its samples column-wise in read-only numpy arrays
(``t``, ``x``, ``y``, ``valid``). Time is always seconds from trace start.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EmptyTrace, SchemaMismatch, TraceTooShort, UnitViolation

log = logging.getLogger(__name__)

# Tolerance for comparing accumulated float times (seconds).
TIME_EPS = 1e-9


class Unit(str, Enum):
    DEGREES_VISUAL_ANGLE = "DegreesVisualAngle"
    PIXELS = "Pixels"
    NORMALIZED = "Normalized"

    @classmethod
    def parse(cls, value: str) -> "Unit":
        aliases = {
            "degreesvisualangle": cls.DEGREES_VISUAL_ANGLE,
            "dva": cls.DEGREES_VISUAL_ANGLE,
            "deg": cls.DEGREES_VISUAL_ANGLE,
            "pixels": cls.PIXELS,
            "pixel": cls.PIXELS,
            "px": cls.PIXELS,
            "normalized": cls.NORMALIZED,
        }
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise ConfigError(f"unknown coordinate unit {value!r}") from None


@dataclass(frozen=True)
class CoordinateSpace:
    unit: Unit
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "unit", Unit.parse(self.unit) if not isinstance(self.unit, Unit) else self.unit)
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))
        for name, (lo, hi) in (("x_range", self.x_range), ("y_range", self.y_range)):
            if not lo < hi:
                raise ConfigError(f"{name} must satisfy min < max, got {(lo, hi)}")
            if self.unit is Unit.NORMALIZED and (lo < 0.0 or hi > 1.0):
                raise ConfigError(f"normalized {name} must lie within [0, 1], got {(lo, hi)}")

    @classmethod
    def pixels(cls, width: float = 1920, height: float = 1080) -> "CoordinateSpace":
        return cls(Unit.PIXELS, (0.0, width), (0.0, height))

    @classmethod
    def normalized(cls) -> "CoordinateSpace":
        return cls(Unit.NORMALIZED, (0.0, 1.0), (0.0, 1.0))

    @classmethod
    def dva(cls, x_extent: float = 23.0, y_extent: float = 15.0) -> "CoordinateSpace":
        return cls(Unit.DEGREES_VISUAL_ANGLE, (-x_extent, x_extent), (-y_extent, y_extent))

    @property
    def label(self) -> str:
        return {Unit.DEGREES_VISUAL_ANGLE: "deg", Unit.PIXELS: "px", Unit.NORMALIZED: "norm"}[self.unit]

    def to_dict(self) -> dict:
        return {"unit": self.unit.value, "x_range": list(self.x_range), "y_range": list(self.y_range)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoordinateSpace":
        try:
            return cls(Unit.parse(d["unit"]), tuple(d["x_range"]), tuple(d["y_range"]))
        except KeyError as exc:
            raise ConfigError(f"coordinate space missing field {exc}") from None


@dataclass(frozen=True)
class GazeSample:
    t: float
    x: float
    y: float
    valid: bool


def _readonly(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GazeTrace:
    """Time-ordered gaze samples plus recording metadata.

    Invalid samples (blinks, dropouts) are kept with ``valid=False``; their
    coordinates are NaN or whatever the device reported.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    rate_hz: float
    space: CoordinateSpace
    participant: str = "p0"
    activity: str = "unknown"
    dataset: str = "unnamed"
    segment: int = 0

    def __post_init__(self):
        t = _readonly(self.t, float)
        x = _readonly(self.x, float)
        y = _readonly(self.y, float)
        valid = _readonly(self.valid, bool)
        if not (len(t) == len(x) == len(y) == len(valid)):
            raise ValueError("t, x, y and valid must have equal length")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(valid & ~(np.isfinite(x) & np.isfinite(y))):
            raise ValueError("valid samples must have finite coordinates")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "participant", str(self.participant))
        object.__setattr__(self, "activity", str(self.activity))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        gap = self.median_valid_gap()
        period = 1.0 / self.rate_hz
        if gap is not None and abs(gap - period) > 0.2 * period:
            raise ValueError(
                f"median inter-sample gap {gap:.6f}s disagrees with nominal rate {self.rate_hz} Hz"
            )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz

    @property
    def duration(self) -> float:
        """Recording length: last timestamp plus one sample period."""
        if len(self.t) == 0:
            return 0.0
        return float(self.t[-1] - self.t[0]) + self.period

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def trace_id(self) -> str:
        return f"{self.dataset}/{self.participant}/{self.activity}/{self.segment}"

    @property
    def samples(self) -> list[GazeSample]:
        return [
            GazeSample(float(t), float(x), float(y), bool(v))
            for t, x, y, v in zip(self.t, self.x, self.y, self.valid)
        ]

    def median_valid_gap(self) -> float | None:
        both = self.valid[1:] & self.valid[:-1]
        if not both.any():
            return None
        return float(np.median(np.diff(self.t)[both]))

    def slice_time(self, start: float, stop: float, rebase: bool = True) -> "GazeTrace":
        """Samples with ``start <= t < stop``."""
        lo = int(np.searchsorted(self.t, start - TIME_EPS, side="left"))
        hi = int(np.searchsorted(self.t, stop - TIME_EPS, side="left"))
        t = self.t[lo:hi]
        if rebase and len(t):
            t = t - start
        return GazeTrace(
            t, self.x[lo:hi], self.y[lo:hi], self.valid[lo:hi],
            rate_hz=self.rate_hz, space=self.space, participant=self.participant,
            activity=self.activity, dataset=self.dataset, segment=self.segment,
        )

    @classmethod
    def from_samples(cls, samples: Sequence[GazeSample], **meta) -> "GazeTrace":
        return cls(
            [s.t for s in samples], [s.x for s in samples], [s.y for s in samples],
            [s.valid for s in samples], **meta,
        )


@dataclass(frozen=True, eq=False)
class WindowInstance:
    """A fixed-duration slice of one activity segment; the unit of classification."""

    trace: GazeTrace
    window_s: float
    source_id: str
    start_s: float

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")

    @property
    def activity(self) -> str:
        return self.trace.activity

    @property
    def participant(self) -> str:
        return self.trace.participant

    @property
    def origin(self) -> tuple[str, float]:
        return (self.source_id, self.start_s)

    @property
    def span(self) -> float:
        """Time between first and last sample of the slice."""
        if len(self.trace) == 0:
            return 0.0
        return float(self.trace.t[-1] - self.trace.t[0])

    @classmethod
    def whole(cls, trace: GazeTrace) -> "WindowInstance":
        """Wrap an entire (rebased) trace as a single window."""
        return cls(trace, trace.duration, trace.trace_id, 0.0)


class AdapterKind(str, Enum):
    GAZEBASE = "GazeBase-like"
    SEDENTARY = "SedentaryActivity-like"
    DESKTOP = "DesktopActivity-like"
    GENERIC = "generic CSV"

    @classmethod
    def parse(cls, value: str) -> "AdapterKind":
        key = re.sub(r"[^a-z]", "", str(value).lower())
        for kind, names in (
            (cls.GAZEBASE, ("gazebaselike", "gazebase")),
            (cls.SEDENTARY, ("sedentaryactivitylike", "sedentaryactivity", "sedentary")),
            (cls.DESKTOP, ("desktopactivitylike", "desktopactivity", "desktop")),
            (cls.GENERIC, ("genericcsv", "generic", "csv")),
        ):
            if key in names:
                return kind
        raise ConfigError(f"unknown adapter kind {value!r}")


GAZEBASE_TASKS = {
    "FXS": "Fixation",
    "HSS": "Horizontal Saccade",
    "RAN": "Random Saccade",
    "TEX": "Reading",
    "VD1": "Video Viewing",
    "BLG": "Gaze-driven Game",
}

_DEFAULT_FILENAME_PATTERNS = {
    AdapterKind.GAZEBASE: r"S_(?P<participant>\d+)_S\d+_(?P<activity>[A-Z0-9]+)",
    AdapterKind.SEDENTARY: r"(?P<participant>[^_/\\]+)_(?P<activity>[^_./\\]+)",
    AdapterKind.DESKTOP: r"(?P<participant>[^_/\\]+)_(?P<activity>[^_./\\]+)",
    AdapterKind.GENERIC: r"(?P<participant>[^_/\\]+)_(?P<activity>[^_./\\]+)",
}


@dataclass(frozen=True)
class DatasetSpec:
    """Static description of one dataset and how to read it."""

    name: str
    adapter: AdapterKind
    class_labels: tuple[str, ...]
    participants: tuple[str, ...]
    space: CoordinateSpace
    rate_hz: float
    dispersion_threshold: float
    downsample_raw_text: int = 1
    # generic CSV column mapping: keys t, x, y, valid, participant, activity, segment
    columns: Mapping[str, str] = field(default_factory=dict)
    filename_pattern: str | None = None
    label_map: Mapping[str, str] = field(default_factory=dict)
    time_scale: float = 1.0
    unit_tolerance: float = 0.05
    min_confidence: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "adapter", AdapterKind.parse(self.adapter) if not isinstance(self.adapter, AdapterKind) else self.adapter)
        labels = tuple(str(c) for c in self.class_labels)
        if not labels or len(set(labels)) != len(labels):
            raise ConfigError("class_labels must be non-empty and unique")
        object.__setattr__(self, "class_labels", labels)
        object.__setattr__(self, "participants", tuple(str(p) for p in self.participants))
        if not self.dispersion_threshold > 0:
            raise ConfigError("dispersion_threshold must be positive")
        if not self.rate_hz > 0:
            raise ConfigError("rate_hz must be positive")
        if int(self.downsample_raw_text) != self.downsample_raw_text or self.downsample_raw_text < 1:
            raise ConfigError("downsample_raw_text must be a positive integer")
        object.__setattr__(self, "downsample_raw_text", int(self.downsample_raw_text))

    @property
    def pattern(self) -> str:
        return self.filename_pattern or _DEFAULT_FILENAME_PATTERNS[self.adapter]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "adapter": self.adapter.value,
            "class_labels": list(self.class_labels),
            "participants": list(self.participants),
            "space": self.space.to_dict(),
            "rate_hz": self.rate_hz,
            "dispersion_threshold": self.dispersion_threshold,
            "downsample_raw_text": self.downsample_raw_text,
        }
        if self.columns:
            d["columns"] = dict(self.columns)
        if self.filename_pattern:
            d["filename_pattern"] = self.filename_pattern
        if self.label_map:
            d["label_map"] = dict(self.label_map)
        if self.time_scale != 1.0:
            d["time_scale"] = self.time_scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetSpec":
        required = ("name", "adapter", "class_labels", "space", "rate_hz", "dispersion_threshold")
        missing = [k for k in required if k not in d]
        if missing:
            raise ConfigError(f"dataset config missing fields: {', '.join(missing)}")
        kwargs = dict(d)
        kwargs["space"] = CoordinateSpace.from_dict(d["space"])
        kwargs["class_labels"] = tuple(d["class_labels"])
        kwargs["participants"] = tuple(d.get("participants", ()))
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown dataset config fields: {', '.join(sorted(unknown))}")
        return cls(**kwargs)


def load_config_file(path: str | Path) -> dict:
    """Read a JSON or TOML document into a dict."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_dataset_spec(path: str | Path) -> DatasetSpec:
    return DatasetSpec.from_dict(load_config_file(path))


# Defaults for the three public datasets; thresholds are toolkit choices.
def gazebase_spec() -> DatasetSpec:
    return DatasetSpec(
        name="GazeBase",
        adapter=AdapterKind.GAZEBASE,
        class_labels=tuple(GAZEBASE_TASKS.values()),
        participants=tuple(f"{i:02d}" for i in range(1, 15)),
        space=CoordinateSpace.dva(),
        rate_hz=1000.0,
        dispersion_threshold=1.0,
        downsample_raw_text=10,
        label_map=dict(GAZEBASE_TASKS),
    )


def sedentary_activity_spec() -> DatasetSpec:
    return DatasetSpec(
        name="SedentaryActivity",
        adapter=AdapterKind.SEDENTARY,
        class_labels=("Read", "Watch", "Browse", "Search", "Play", "Interpret", "Debug", "Write"),
        participants=tuple(f"{i:02d}" for i in range(1, 25)),
        space=CoordinateSpace.pixels(1920, 1080),
        rate_hz=30.0,
        dispersion_threshold=80.0,
    )


def desktop_activity_spec() -> DatasetSpec:
    return DatasetSpec(
        name="DesktopActivity",
        adapter=AdapterKind.DESKTOP,
        class_labels=("Browse", "Play", "Read", "Search", "Watch", "Write"),
        participants=tuple(f"{i:02d}" for i in range(1, 9)),
        space=CoordinateSpace.normalized(),
        rate_hz=30.0,
        dispersion_threshold=0.05,
    )


BUILTIN_SPECS = {
    "GazeBase": gazebase_spec,
    "SedentaryActivity": sedentary_activity_spec,
    "DesktopActivity": desktop_activity_spec,
}


# ---------------------------------------------------------------------------
# ingest

def _num(value) -> float:
    try:
        v = float(str(value).strip())
    except (TypeError, ValueError):
        return math.nan
    return v


def _truthy(value) -> bool:
    return str(value).strip().lower() in {"1", "true", "yes", "y", "t", "valid"}


@dataclass
class _Row:
    t: float
    x: float
    y: float
    ok: bool
    participant: str
    activity: str
    segment: str


def _read_table(path: Path, has_header: bool | None) -> tuple[list[str] | None, list[list[str]]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        delimiter = "\t" if path.suffix.lower() == ".tsv" or ("\t" in sample and "," not in sample) else ","
        rows = [r for r in csv.reader(fh, delimiter=delimiter, skipinitialspace=True) if r and any(c.strip() for c in r)]
    if not rows:
        return None, []
    if has_header is None:
        has_header = all(math.isnan(_num(c)) for c in rows[0])
    if has_header:
        return [c.strip() for c in rows[0]], rows[1:]
    return None, rows


def _column_index(header: list[str] | None, name: str, path: Path) -> int:
    if header is None:
        raise SchemaMismatch(f"{path}: header row required to locate column {name!r}")
    lowered = [h.lower() for h in header]
    if name.lower() not in lowered:
        raise SchemaMismatch(f"{path}: missing column {name!r} (have {header})")
    return lowered.index(name.lower())


def _file_labels(path: Path, spec: DatasetSpec, participant, activity) -> tuple[str, str]:
    if participant is not None and activity is not None:
        return str(participant), spec.label_map.get(str(activity), str(activity))
    m = re.search(spec.pattern, path.name)
    if m is None:
        raise SchemaMismatch(
            f"{path.name}: cannot infer participant/activity from file name (pattern {spec.pattern!r})"
        )
    groups = m.groupdict()
    p = participant if participant is not None else groups.get("participant", "p0")
    a = activity if activity is not None else groups.get("activity", "unknown")
    return str(p), spec.label_map.get(str(a), str(a))


def _parse_rows(path: Path, spec: DatasetSpec, participant, activity) -> list[_Row]:
    kind = spec.adapter
    if kind is AdapterKind.SEDENTARY:
        header, rows = _read_table(path, None)
        p, a = _file_labels(path, spec, participant, activity)
        if rows and len(rows[0]) < 3:
            raise SchemaMismatch(f"{path}: expected columns timestamp, x, y")
        out = []
        for i, r in enumerate(rows):
            if len(r) < 3:
                out.append(_Row(i / spec.rate_hz, math.nan, math.nan, False, p, a, "0"))
                continue
            x, y = _num(r[1]), _num(r[2])
            out.append(_Row(i / spec.rate_hz, x, y, True, p, a, "0"))
        return out

    header, rows = _read_table(path, True)
    if header is None and not rows:
        return []
    if kind is AdapterKind.GAZEBASE:
        cols = {"t": "n", "x": "x", "y": "y", "valid": "val"}
        scale = 1e-3
    elif kind is AdapterKind.DESKTOP:
        cols = {"t": "gaze_timestamp", "x": "norm_pos_x", "y": "norm_pos_y", "valid": "confidence"}
        scale = 1.0
    else:
        cols = dict(spec.columns)
        if "x" not in cols or "y" not in cols:
            raise ConfigError("generic CSV adapter needs columns.x and columns.y")
        scale = spec.time_scale
    idx = {k: _column_index(header, v, path) for k, v in cols.items() if v}
    need = max(idx.values()) + 1
    from_file = "participant" in idx or "activity" in idx
    if from_file:
        fp, fa = participant, activity
    else:
        fp, fa = _file_labels(path, spec, participant, activity)

    out = []
    for i, r in enumerate(rows):
        if len(r) < need:
            r = list(r) + [""] * (need - len(r))
        t = _num(r[idx["t"]]) * scale if "t" in idx else i / spec.rate_hz
        x, y = _num(r[idx["x"]]), _num(r[idx["y"]])
        if "valid" not in idx:
            ok = True
        elif kind is AdapterKind.GAZEBASE:
            ok = _num(r[idx["valid"]]) == 0
        elif kind is AdapterKind.DESKTOP:
            ok = _num(r[idx["valid"]]) >= spec.min_confidence
        else:
            ok = _truthy(r[idx["valid"]])
        p = r[idx["participant"]].strip() if "participant" in idx else fp
        a = r[idx["activity"]].strip() if "activity" in idx else fa
        a = spec.label_map.get(a, a)
        seg = r[idx["segment"]].strip() if "segment" in idx else "0"
        out.append(_Row(t, x, y, ok, str(p), str(a), seg))
    return out


def ingest(
    path: str | Path,
    spec: DatasetSpec,
    participant: str | None = None,
    activity: str | None = None,
) -> list[GazeTrace]:
    """Read one recording file into traces, one per (participant, activity, segment).

    Rows with non-numeric or lost coordinates become invalid samples. Coordinates
    beyond the declared range by more than ``spec.unit_tolerance`` of its span
    are invalidated; if most samples are that far out, the declared unit is
    assumed wrong and :class:`UnitViolation` is raised.
    """
    path = Path(path)
    rows = _parse_rows(path, spec, participant, activity)
    if not rows:
        raise EmptyTrace(f"{path}: no rows")

    (x0, x1), (y0, y1) = spec.space.x_range, spec.space.y_range
    tol_x = spec.unit_tolerance * (x1 - x0)
    tol_y = spec.unit_tolerance * (y1 - y0)
    numeric = 0
    far = 0
    for row in rows:
        if not (math.isfinite(row.x) and math.isfinite(row.y)):
            row.ok = False
            continue
        numeric += 1
        if row.x < x0 - tol_x or row.x > x1 + tol_x or row.y < y0 - tol_y or row.y > y1 + tol_y:
            far += 1
            row.ok = False
    if numeric and far / numeric > 0.5:
        raise UnitViolation(
            f"{path}: {far}/{numeric} samples lie outside the declared {spec.space.unit.value} range"
        )

    groups: list[tuple[tuple[str, str, str], list[_Row]]] = []
    for row in rows:
        if not math.isfinite(row.t):
            continue
        key = (row.participant, row.activity, row.segment)
        if groups and groups[-1][0] == key:
            groups[-1][1].append(row)
        else:
            groups.append((key, [row]))

    traces = []
    seen: dict[tuple[str, str], int] = {}
    for (p, a, _), members in groups:
        seg_no = seen.get((p, a), 0)
        seen[(p, a)] = seg_no + 1
        kept = [members[0]]
        for row in members[1:]:
            if row.t > kept[-1].t:
                kept.append(row)
        if len(kept) < len(members):
            log.warning("%s: dropped %d rows with non-increasing timestamps", path.name, len(members) - len(kept))
        if not any(r.ok for r in kept):
            log.warning("%s: segment %s/%s has no valid samples; skipped", path.name, p, a)
            continue
        t0 = kept[0].t
        traces.append(
            GazeTrace(
                [r.t - t0 for r in kept],
                [r.x for r in kept],
                [r.y for r in kept],
                [r.ok for r in kept],
                rate_hz=spec.rate_hz, space=spec.space, participant=p, activity=a,
                dataset=spec.name, segment=seg_no,
            )
        )
    if not traces:
        raise EmptyTrace(f"{path}: no valid samples")
    return traces


def ingest_many(paths: Sequence[str | Path], spec: DatasetSpec) -> list[GazeTrace]:
    """Ingest several files, skipping traces whose activity is not a class label."""
    out = []
    for p in paths:
        for trace in ingest(p, spec):
            if trace.activity not in spec.class_labels:
                log.info("%s: activity %r not in class labels; skipped", p, trace.activity)
                continue
            out.append(trace)
    return out


# ---------------------------------------------------------------------------
# windowing

class WindowPolicy(str, Enum):
    NON_OVERLAPPING = "NonOverlapping"
    RANDOM_OFFSET = "RandomOffset"


def segment_windows(
    trace: GazeTrace,
    window_s: float,
    policy: WindowPolicy | str = WindowPolicy.NON_OVERLAPPING,
    seed: int | None = None,
    n_windows: int = 1,
) -> list[WindowInstance]:
    """Cut a trace into fixed-length windows.

    ``NonOverlapping`` tiles from t=0 and drops a short tail. ``RandomOffset``
    draws ``n_windows`` start offsets uniformly over ``[0, duration - window_s]``
    from ``seed``.
    """
    policy = WindowPolicy(policy)
    if not window_s > 0:
        raise ValueError("window_s must be positive")
    duration = trace.duration
    if duration + TIME_EPS < window_s:
        raise TraceTooShort(
            f"{trace.trace_id}: duration {duration:.3f}s shorter than window {window_s}s"
        )
    if policy is WindowPolicy.NON_OVERLAPPING:
        count = int(math.floor((duration + TIME_EPS) / window_s))
        offsets = [k * window_s for k in range(count)]
    else:
        if seed is None:
            raise ValueError("RandomOffset policy requires a seed")
        rng = np.random.default_rng(seed)
        offsets = [float(o) for o in rng.uniform(0.0, max(duration - window_s, 0.0), size=n_windows)]
    return [
        WindowInstance(trace.slice_time(o, o + window_s), float(window_s), trace.trace_id, float(o))
        for o in offsets
    ]


def iter_windows(traces: Sequence[GazeTrace], window_s: float) -> Iterator[WindowInstance]:
    """Non-overlapping windows from every trace long enough to hold one."""
    for trace in traces:
        if trace.duration + TIME_EPS < window_s:
            continue
        yield from segment_windows(trace, window_s)


# ---------------------------------------------------------------------------
# canvas projection

def to_canvas(x, y, space: CoordinateSpace, canvas: tuple[int, int]):
    """Map coordinates in ``space`` to pixel coordinates on a ``(width, height)`` canvas.

    The map is affine, y grows downward, and out-of-range values clamp to the
    canvas edge so the result always lies in ``[0, width) x [0, height)``.
    Accepts scalars or arrays.
    """
    width, height = canvas
    if width <= 0 or height <= 0:
        raise ValueError("canvas dimensions must be positive")
    (x0, x1), (y0, y1) = space.x_range, space.y_range
    px = (np.asarray(x, dtype=float) - x0) / (x1 - x0) * width
    py = (np.asarray(y, dtype=float) - y0) / (y1 - y0) * height
    px = np.clip(px, 0.0, np.nextafter(float(width), 0.0))
    py = np.clip(py, 0.0, np.nextafter(float(height), 0.0))
    if px.ndim == 0:
        return float(px), float(py)
    return px, py
