"""Synthetic gaze traces emulating common task archetypes.

Used for offline tests and protocol dry-runs where the licensed recordings
are unavailable. Every generator is seeded and returns a valid
:class:`~gazeprompt.core.GazeTrace`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import AdapterKind, CoordinateSpace, DatasetSpec, GazeTrace


class SynthKind(str, Enum):
    STATIONARY_FIXATION = "StationaryFixation"
    HORIZONTAL_SACCADE = "HorizontalSaccadePattern"
    RANDOM_SACCADE = "RandomSaccadePattern"
    READING_SWEEP = "ReadingSweep"
    SMOOTH_PURSUIT = "SmoothPursuit"
    RANDOM_WALK = "RandomWalk"


@dataclass(frozen=True)
class SynthActivity:
    kind: SynthKind
    rate_hz: float = 30.0
    duration_s: float = 10.0
    noise_sigma: float | None = None  # space units; None -> 0.2% of the x span
    seed: int = 0
    space: CoordinateSpace = field(default_factory=CoordinateSpace.pixels)
    dwell_s: float = 0.5
    blink_rate_hz: float = 0.0
    participant: str = "p0"
    activity: str | None = None
    dataset: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "kind", SynthKind(self.kind))
        if not (self.rate_hz > 0 and self.duration_s > 0):
            raise ValueError("rate_hz and duration_s must be positive")


def _frac(space: CoordinateSpace, fx, fy):
    (x0, x1), (y0, y1) = space.x_range, space.y_range
    return x0 + np.asarray(fx) * (x1 - x0), y0 + np.asarray(fy) * (y1 - y0)


def _dwell_path(t: np.ndarray, starts: np.ndarray, xs, ys):
    seg = np.searchsorted(starts, t, side="right") - 1
    return np.asarray(xs)[seg], np.asarray(ys)[seg]


def _random_dwells(rng, total: float, lo: float, hi: float) -> np.ndarray:
    starts = [0.0]
    while starts[-1] < total:
        starts.append(starts[-1] + rng.uniform(lo, hi))
    return np.array(starts)


def synth_generate(spec: SynthActivity) -> GazeTrace:
    rng = np.random.default_rng(spec.seed)
    n = max(int(round(spec.duration_s * spec.rate_hz)), 1)
    t = np.arange(n) / spec.rate_hz
    space = spec.space
    kind = spec.kind

    if kind is SynthKind.STATIONARY_FIXATION:
        x, y = _frac(space, np.full(n, 0.5), np.full(n, 0.5))
    elif kind is SynthKind.HORIZONTAL_SACCADE:
        side = (np.floor(t / spec.dwell_s).astype(int) % 2).astype(float)
        x, y = _frac(space, 0.25 + 0.5 * side, np.full(n, 0.5))
    elif kind is SynthKind.RANDOM_SACCADE:
        starts = _random_dwells(rng, spec.duration_s, 0.6 * spec.dwell_s, 1.4 * spec.dwell_s)
        fx, fy = rng.uniform(0.1, 0.9, len(starts)), rng.uniform(0.1, 0.9, len(starts))
        x, y = _dwell_path(t, starts, *_frac(space, fx, fy))
    elif kind is SynthKind.READING_SWEEP:
        # stepwise left-to-right ramps (word fixations) with return sweeps
        starts = _random_dwells(rng, spec.duration_s, 0.2, 0.35)
        fx, fy = [], []
        line, pos = 0, 0.1
        for _ in starts:
            fx.append(pos)
            fy.append(0.15 + 0.08 * (line % 9))
            pos += rng.uniform(0.04, 0.09)
            if pos > 0.9:
                pos, line = 0.1, line + 1
        x, y = _dwell_path(t, starts, *_frac(space, fx, fy))
    elif kind is SynthKind.SMOOTH_PURSUIT:
        phase = rng.uniform(0, 2 * np.pi)
        fx = 0.5 + 0.35 * np.sin(2 * np.pi * 0.2 * t + phase)
        fy = 0.5 + 0.3 * np.sin(2 * np.pi * 0.13 * t + phase / 2)
        x, y = _frac(space, fx, fy)
    else:
        steps = rng.normal(0.0, 0.01, size=(n, 2))
        steps[0] = rng.uniform(0.2, 0.8, 2)
        walk = np.cumsum(steps, axis=0)
        # reflect into [0, 1]
        walk = np.abs(((walk + 1.0) % 2.0) - 1.0)
        x, y = _frac(space, walk[:, 0], walk[:, 1])

    x = np.asarray(x, float).copy()
    y = np.asarray(y, float).copy()
    sigma = spec.noise_sigma
    if sigma is None:
        sigma = 0.002 * (space.x_range[1] - space.x_range[0])
    if sigma > 0:
        x += rng.normal(0.0, sigma, n)
        y += rng.normal(0.0, sigma, n)
    x = np.clip(x, *space.x_range)
    y = np.clip(y, *space.y_range)

    valid = np.ones(n, bool)
    if spec.blink_rate_hz > 0:
        for onset in rng.uniform(0, spec.duration_s, rng.poisson(spec.blink_rate_hz * spec.duration_s)):
            valid[(t >= onset) & (t < onset + rng.uniform(0.1, 0.2))] = False
        if not valid.any():
            valid[0] = True
        x[~valid] = np.nan
        y[~valid] = np.nan

    return GazeTrace(
        t, x, y, valid, rate_hz=spec.rate_hz, space=space, participant=spec.participant,
        activity=spec.activity or kind.value, dataset=spec.dataset,
    )


ARCHETYPE_CYCLE = list(SynthKind)


def _seed_for(*keys) -> int:
    return int.from_bytes(hashlib.sha256("|".join(map(str, keys)).encode()).digest()[:8], "big")


def synthetic_dataset(
    class_labels: Sequence[str],
    n_participants: int,
    rate_hz: float = 30.0,
    duration_s: float = 30.0,
    seed: int = 0,
    space: CoordinateSpace | None = None,
    name: str = "synthetic",
    dispersion_threshold: float | None = None,
    downsample_raw_text: int = 1,
    blink_rate_hz: float = 0.0,
) -> tuple[DatasetSpec, list[GazeTrace]]:
    """A dataset spec plus one trace per (participant, class).

    Classes map onto the archetypes in order; when there are more classes than
    archetypes the cycle repeats with a different dwell time so that each
    class still has its own signature.
    """
    space = space or CoordinateSpace.pixels()
    span = space.x_range[1] - space.x_range[0]
    participants = tuple(f"{i + 1:02d}" for i in range(n_participants))
    spec = DatasetSpec(
        name=name, adapter=AdapterKind.GENERIC, class_labels=tuple(class_labels),
        participants=participants, space=space, rate_hz=rate_hz,
        dispersion_threshold=dispersion_threshold or 0.042 * span,
        downsample_raw_text=downsample_raw_text,
        columns={"t": "t", "x": "x", "y": "y", "valid": "valid", "participant": "participant", "activity": "activity"},
    )
    traces = []
    for ci, label in enumerate(spec.class_labels):
        kind = ARCHETYPE_CYCLE[ci % len(ARCHETYPE_CYCLE)]
        dwell = 0.5 * (1 + ci // len(ARCHETYPE_CYCLE))
        for p in participants:
            activity = SynthActivity(
                kind, rate_hz=rate_hz, duration_s=duration_s, seed=_seed_for(seed, label, p),
                space=space, dwell_s=dwell, blink_rate_hz=blink_rate_hz,
                participant=p, activity=label, dataset=name,
            )
            traces.append(synth_generate(activity))
    return spec, traces


def write_csv(traces: Sequence[GazeTrace], path) -> None:
    """Write traces in the generic CSV layout used by :func:`synthetic_dataset`."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["participant", "activity", "t", "x", "y", "valid"])
        for tr in traces:
            for t, x, y, v in zip(tr.t, tr.x, tr.y, tr.valid):
                w.writerow([tr.participant, tr.activity, repr(float(t)), repr(float(x)), repr(float(y)), int(v)])
