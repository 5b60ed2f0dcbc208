"""Dispersion-threshold (I-DT) fixation and saccade identification.

:func:`idt_detect` is the production path (incremental min/max while a
fixation grows). :func:`idt_oracle` is a deliberately naive re-implementation
that recomputes dispersion from scratch for every candidate; the test-suite
checks the two against each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import GazeTrace, WindowInstance
from .errors import NoValidSamples

# Slack for comparing sample-time differences with the dwell threshold, so that
# 6 samples at 30 Hz (span 0.2 s in floating point) count as 200 ms.
DWELL_EPS = 1e-9


@dataclass(frozen=True)
class IdtParams:
    dispersion_threshold: float
    min_dwell_s: float = 0.200
    max_gap_s: float = 0.075

    def __post_init__(self):
        for name in ("dispersion_threshold", "min_dwell_s", "max_gap_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Fixation:
    x: float
    y: float
    start_t: float
    end_t: float
    # inclusive indices into the window's sample arrays
    start_index: int = -1
    end_index: int = -1

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def duration(self) -> float:
        return self.end_t - self.start_t

    def to_json(self) -> dict:
        return {"kind": "fixation", "x": self.x, "y": self.y, "start": self.start_t, "dur": self.duration}


@dataclass(frozen=True)
class Saccade:
    start_xy: tuple[float, float]
    end_xy: tuple[float, float]
    start_t: float
    end_t: float

    @property
    def duration(self) -> float:
        return self.end_t - self.start_t

    def to_json(self) -> dict:
        return {
            "kind": "saccade",
            "x": self.start_xy[0], "y": self.start_xy[1],
            "x_end": self.end_xy[0], "y_end": self.end_xy[1],
            "start": self.start_t, "dur": self.duration,
        }


Event = Union[Fixation, Saccade]


def _trace_of(window) -> GazeTrace:
    return window.trace if isinstance(window, WindowInstance) else window


def _valid_runs(trace: GazeTrace, max_gap_s: float) -> list[np.ndarray]:
    """Indices of valid samples, split wherever consecutive valid samples are > max_gap_s apart."""
    idx = np.flatnonzero(trace.valid)
    if len(idx) == 0:
        return []
    cuts = np.flatnonzero(np.diff(trace.t[idx]) > max_gap_s) + 1
    return np.split(idx, cuts)


def _saccades_between(fixations: list[Fixation], trace: GazeTrace) -> list[Saccade]:
    if not fixations:
        return []
    valid = np.flatnonzero(trace.valid)
    first, last = valid[0], valid[-1]
    out = []
    f0 = fixations[0]
    if trace.t[first] < f0.start_t:
        out.append(Saccade((float(trace.x[first]), float(trace.y[first])), f0.centroid,
                           float(trace.t[first]), f0.start_t))
    for a, b in zip(fixations, fixations[1:]):
        out.append(Saccade(a.centroid, b.centroid, a.end_t, b.start_t))
    fn = fixations[-1]
    if trace.t[last] > fn.end_t:
        out.append(Saccade(fn.centroid, (float(trace.x[last]), float(trace.y[last])),
                           fn.end_t, float(trace.t[last])))
    return out


def idt_detect(window, params: IdtParams) -> tuple[list[Fixation], list[Saccade]]:
    """Identify fixations with I-DT and fill the gaps between them with saccades.

    A candidate group starts as the shortest run of samples spanning
    ``min_dwell_s``. If its dispersion ``(max x - min x) + (max y - min y)`` is
    within the threshold (ties count as inside) it grows one sample at a time
    until the next sample would break the threshold; otherwise the start slides
    forward one sample. Only valid samples take part, and a candidate never
    spans a dropout longer than ``max_gap_s``.
    """
    trace = _trace_of(window)
    if trace.n_valid == 0:
        raise NoValidSamples(f"{trace.trace_id}: window has no valid samples")
    thr = params.dispersion_threshold
    dwell = params.min_dwell_s - DWELL_EPS
    fixations: list[Fixation] = []
    for run in _valid_runs(trace, params.max_gap_s):
        t, x, y = trace.t[run], trace.x[run], trace.y[run]
        n = len(run)
        i = 0
        while i < n:
            # first j with t[j] - t[i] >= dwell, evaluated as a difference
            j = max(int(np.searchsorted(t, t[i] + dwell, side="left")), i + 1)
            while j - 1 > i and t[j - 1] - t[i] >= dwell:
                j -= 1
            while j < n and t[j] - t[i] < dwell:
                j += 1
            if j >= n:
                break
            xs, ys = x[i:j + 1], y[i:j + 1]
            xlo, xhi, ylo, yhi = xs.min(), xs.max(), ys.min(), ys.max()
            if (xhi - xlo) + (yhi - ylo) > thr:
                i += 1
                continue
            while j + 1 < n:
                nx, ny = x[j + 1], y[j + 1]
                cxlo, cxhi = min(xlo, nx), max(xhi, nx)
                cylo, cyhi = min(ylo, ny), max(yhi, ny)
                if (cxhi - cxlo) + (cyhi - cylo) > thr:
                    break
                xlo, xhi, ylo, yhi = cxlo, cxhi, cylo, cyhi
                j += 1
            fixations.append(Fixation(
                float(np.mean(x[i:j + 1])), float(np.mean(y[i:j + 1])),
                float(t[i]), float(t[j]), int(run[i]), int(run[j]),
            ))
            i = j + 1
    return fixations, _saccades_between(fixations, trace)


def idt_oracle(window, params: IdtParams) -> tuple[list[Fixation], list[Saccade]]:
    """Brute-force I-DT used only to cross-check :func:`idt_detect`."""
    trace = _trace_of(window)
    points = [
        (k, float(trace.t[k]), float(trace.x[k]), float(trace.y[k]))
        for k in range(len(trace)) if trace.valid[k]
    ]
    if not points:
        raise NoValidSamples("no valid samples")

    def dispersion(group):
        gx = [p[2] for p in group]
        gy = [p[3] for p in group]
        return (max(gx) - min(gx)) + (max(gy) - min(gy))

    def gap_free(group):
        return all(b[1] - a[1] <= params.max_gap_s for a, b in zip(group, group[1:]))

    fixations = []
    start = 0
    while start < len(points):
        end = None
        for cand in range(start, len(points)):
            if points[cand][1] - points[start][1] >= params.min_dwell_s - DWELL_EPS:
                end = cand
                break
        if end is None or not gap_free(points[start:end + 1]):
            if end is None:
                break
            start += 1
            continue
        if dispersion(points[start:end + 1]) > params.dispersion_threshold:
            start += 1
            continue
        while end + 1 < len(points):
            grown = points[start:end + 2]
            if not gap_free(grown) or dispersion(grown) > params.dispersion_threshold:
                break
            end += 1
        members = points[start:end + 1]
        fixations.append(Fixation(
            sum(p[2] for p in members) / len(members),
            sum(p[3] for p in members) / len(members),
            members[0][1], members[-1][1], members[0][0], members[-1][0],
        ))
        start = end + 1

    saccades = []
    if fixations:
        head, tail = points[0], points[-1]
        if head[1] < fixations[0].start_t:
            saccades.append(Saccade((head[2], head[3]), (fixations[0].x, fixations[0].y),
                                    head[1], fixations[0].start_t))
        for k in range(1, len(fixations)):
            prev, nxt = fixations[k - 1], fixations[k]
            saccades.append(Saccade((prev.x, prev.y), (nxt.x, nxt.y), prev.end_t, nxt.start_t))
        if tail[1] > fixations[-1].end_t:
            saccades.append(Saccade((fixations[-1].x, fixations[-1].y), (tail[2], tail[3]),
                                    fixations[-1].end_t, tail[1]))
    return fixations, saccades


def merge_events(fixations, saccades) -> list[Event]:
    """Fixations and saccades interleaved in temporal order."""
    return sorted([*fixations, *saccades], key=lambda e: (e.start_t, e.end_t))


def dispersion_of(trace: GazeTrace, fixation: Fixation) -> float:
    """Dispersion of the valid samples a fixation covers (for post-hoc checks)."""
    sl = slice(fixation.start_index, fixation.end_index + 1)
    m = trace.valid[sl]
    xs, ys = trace.x[sl][m], trace.y[sl][m]
    return float((xs.max() - xs.min()) + (ys.max() - ys.min()))
