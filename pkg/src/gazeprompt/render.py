"""Rasterizers for the six gaze visualizations.

Every renderer returns a :class:`RenderedImage` of exactly the canvas size,
whatever the window length or sample count. Output is a pure function of
(window, events, style): the PNG encoder runs with fixed settings and writes
no time chunks, so equal inputs give byte-identical files.
"""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from .core import GazeTrace, WindowInstance, to_canvas
from .errors import ConfigError, EventWindowMismatch, NoFixations, NoValidSamples, TooFewSamples
from .events import Fixation, Saccade

RGB = tuple[int, int, int]


def hex_to_rgb(value: str) -> RGB:
    v = value.lstrip("#")
    if len(v) != 6:
        raise ConfigError(f"bad colour {value!r}")
    return tuple(int(v[i:i + 2], 16) for i in (0, 2, 4))


def rgb_to_hex(rgb: RGB) -> str:
    return "#{:02X}{:02X}{:02X}".format(*rgb)


class VizKind(str, Enum):
    TIMELINE_RAW = "timeline-raw"
    TIMELINE_FEAT = "timeline-feat"
    HEATMAP_RAW = "heatmap-abs"
    HEATMAP_FEAT = "heatmap-count"
    SCANPATH_RAW = "scanpath-raw"
    SCANPATH_FEAT = "scanpath-feat"

    @property
    def needs_events(self) -> bool:
        return self in (VizKind.TIMELINE_FEAT, VizKind.HEATMAP_FEAT, VizKind.SCANPATH_FEAT)


class HeatmapMode(str, Enum):
    ABSOLUTE_DURATION = "AbsoluteDuration"
    FIXATION_COUNT = "FixationCount"


class ScanpathMode(str, Enum):
    RAW = "Raw"
    FEATURE = "Feature"


@dataclass(frozen=True)
class Canvas:
    width: int = 1024
    height: int = 512
    background: RGB = (255, 255, 255)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("canvas dimensions must be positive")

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class Style:
    """Frozen drawing constants. Colours are RGB tuples."""

    x_color: RGB = (0xFF, 0x7F, 0x0E)
    y_color: RGB = (0x1F, 0x77, 0xB4)
    x_saccade_color: RGB = (0xFF, 0xBB, 0x78)
    y_saccade_color: RGB = (0x8F, 0xBB, 0xD9)
    axis_color: RGB = (0, 0, 0)
    raw_line_width: int = 2
    fixation_thickness: int = 4
    saccade_width: int = 1
    dash_on: int = 6
    dash_off: int = 4
    heatmap_background: RGB = (0x00, 0x00, 0xB4)
    gradient_start: RGB = (0xAD, 0xD8, 0xE6)
    gradient_end: RGB = (0x00, 0x00, 0x8B)
    scanpath_line_width: int = 2
    scanpath_saccade_color: RGB = (0x80, 0x80, 0x80)
    r_min: float = 4.0
    r_per_s: float = 20.0
    r_max: float = 40.0
    cell_px: int = 50
    blur_sigma_cells: float = 1.0
    # plot margins for timelines: left, top, right, bottom
    margins: tuple[int, int, int, int] = (64, 16, 16, 40)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Style":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown style field {k!r}")
            if k.endswith("color") or k.endswith("background") or k.startswith("gradient"):
                kwargs[k] = hex_to_rgb(v) if isinstance(v, str) else tuple(v)
            elif k == "margins":
                kwargs[k] = tuple(int(m) for m in v)
            else:
                kwargs[k] = v
        return replace(cls(), **kwargs)


DEFAULT_STYLE = Style()
DEFAULT_CANVAS = Canvas()


@dataclass(frozen=True, eq=False)
class RenderedImage:
    pixels: np.ndarray
    kind: VizKind
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("pixels must be an (H, W, 3) array")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @cached_property
    def png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG", compress_level=6, optimize=False)
        return buf.getvalue()

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.png).hexdigest()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.png)
        return path


def _meta(window: WindowInstance | GazeTrace, seed=None) -> dict:
    if isinstance(window, WindowInstance):
        return {"origin": list(window.origin), "window_s": window.window_s, "seed": seed}
    return {"origin": [window.trace_id, 0.0], "window_s": window.duration, "seed": seed}


def _unwrap(window) -> tuple[GazeTrace, float]:
    if isinstance(window, WindowInstance):
        return window.trace, window.window_s
    return window, window.duration


def _font():
    try:
        return ImageFont.load_default(size=11)
    except TypeError:  # Pillow < 10.1
        return ImageFont.load_default()


def _new(canvas: Canvas, background: RGB) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    img = Image.new("RGB", canvas.size, background)
    draw = ImageDraw.Draw(img)
    draw.fontmode = "1"  # no anti-aliasing: keeps the palette exact
    return img, draw


def _finish(img: Image.Image, kind: VizKind, meta) -> RenderedImage:
    return RenderedImage(np.asarray(img, dtype=np.uint8), kind, meta)


def _check_events(trace: GazeTrace, span: float, fixations, saccades):
    limit = max(span, float(trace.t[-1]) if len(trace) else 0.0) + 1e-6
    for e in [*fixations, *saccades]:
        if e.start_t < -1e-6 or e.end_t > limit or e.end_t < e.start_t:
            raise EventWindowMismatch(
                f"event [{e.start_t:.3f}, {e.end_t:.3f}]s lies outside the window [0, {span:.3f}]s"
            )


def _valid_runs(valid: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive valid samples."""
    padded = np.concatenate([[False], valid, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def _no_events(canvas: Canvas, kind: VizKind, meta, background: RGB, style: Style) -> RenderedImage:
    img, draw = _new(canvas, background)
    text = "no events"
    box = draw.textbbox((0, 0), text, font=_font())
    w, h = box[2] - box[0], box[3] - box[1]
    ink = (255, 255, 255) if background == style.heatmap_background else style.axis_color
    draw.text(((canvas.width - w) // 2, (canvas.height - h) // 2), text, fill=ink, font=_font())
    return _finish(img, kind, meta)


# ---------------------------------------------------------------------------
# timelines

@dataclass(frozen=True)
class TimelineFrame:
    """Plot rectangle and value range shared by both timeline renderers."""

    left: float
    top: float
    right: float
    bottom: float
    window_s: float
    lo: float
    hi: float

    @classmethod
    def build(cls, trace: GazeTrace, window_s: float, canvas: Canvas, style: Style) -> "TimelineFrame":
        ml, mt, mr, mb = style.margins
        space = trace.space
        lo = min(space.x_range[0], space.y_range[0])
        hi = max(space.x_range[1], space.y_range[1])
        return cls(ml, mt, canvas.width - 1 - mr, canvas.height - 1 - mb, window_s, lo, hi)

    def px(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.window_s)
        return self.left + t / self.window_s * (self.right - self.left)

    def py(self, v):
        v = np.clip(np.asarray(v, dtype=float), self.lo, self.hi)
        return self.bottom - (v - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)


def _nice_step(span: float, max_ticks: int = 10) -> float:
    raw = span / max_ticks
    mag = 10 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _fmt_tick(v: float) -> str:
    return f"{v:g}" if abs(v) >= 0.01 or v == 0 else f"{v:.3g}"


def _draw_axes(draw: ImageDraw.ImageDraw, frame: TimelineFrame, unit_label: str, style: Style):
    font = _font()
    ink = style.axis_color
    draw.line([(frame.left, frame.top), (frame.left, frame.bottom), (frame.right, frame.bottom)], fill=ink, width=1)
    step = _nice_step(frame.window_s)
    k = 0
    while k * step <= frame.window_s + 1e-9:
        t = k * step
        x = round(float(frame.px(t)))
        draw.line([(x, frame.bottom), (x, frame.bottom + 4)], fill=ink)
        label = _fmt_tick(round(t, 6))
        w = draw.textlength(label, font=font)
        draw.text((x - w / 2, frame.bottom + 6), label, fill=ink, font=font)
        k += 1
    vstep = _nice_step(frame.hi - frame.lo, 6)
    v = math.ceil(frame.lo / vstep) * vstep
    while v <= frame.hi + 1e-9:
        y = round(float(frame.py(v)))
        draw.line([(frame.left - 4, y), (frame.left, y)], fill=ink)
        label = _fmt_tick(round(v, 6))
        w = draw.textlength(label, font=font)
        draw.text((frame.left - 6 - w, y - 6), label, fill=ink, font=font)
        v += vstep
    title = "time (s)"
    w = draw.textlength(title, font=font)
    draw.text(((frame.left + frame.right) / 2 - w / 2, frame.bottom + 22), title, fill=ink, font=font)
    draw.text((4, frame.top), unit_label, fill=ink, font=font)


def render_timeline_raw(window, canvas: Canvas = DEFAULT_CANVAS, style: Style = DEFAULT_STYLE) -> RenderedImage:
    """x and y coordinates over time as two coloured polylines; invalid samples break the lines."""
    trace, window_s = _unwrap(window)
    if trace.n_valid < 2:
        raise TooFewSamples("raw timeline needs at least 2 valid samples")
    frame = TimelineFrame.build(trace, window_s, canvas, style)
    img, draw = _new(canvas, canvas.background)
    _draw_axes(draw, frame, trace.space.label, style)
    px = frame.px(trace.t)
    for values, color in ((trace.x, style.x_color), (trace.y, style.y_color)):
        py = frame.py(values)
        for a, b in _valid_runs(trace.valid):
            if b - a < 2:
                continue
            pts = list(zip(px[a:b].tolist(), py[a:b].tolist()))
            draw.line(pts, fill=color, width=style.raw_line_width)
    return _finish(img, VizKind.TIMELINE_RAW, _meta(window))


def _dashed(draw: ImageDraw.ImageDraw, p0, p1, color: RGB, width: int, on: int, off: int):
    (x0, y0), (x1, y1) = p0, p1
    length = math.hypot(x1 - x0, y1 - y0)
    if length == 0:
        return
    ux, uy = (x1 - x0) / length, (y1 - y0) / length
    s = 0.0
    while s < length:
        e = min(s + on - 1, length)
        draw.line([(round(x0 + ux * s), round(y0 + uy * s)), (round(x0 + ux * e), round(y0 + uy * e))],
                  fill=color, width=width)
        s += on + off


def render_timeline_feat(window, events, canvas: Canvas = DEFAULT_CANVAS, style: Style = DEFAULT_STYLE) -> RenderedImage:
    """Fixations as thick solid bars at the centroid value; saccades as dashed connectors."""
    trace, window_s = _unwrap(window)
    if trace.n_valid < 2:
        raise TooFewSamples("feature timeline needs at least 2 valid samples")
    fixations, saccades = events
    _check_events(trace, window_s, fixations, saccades)
    frame = TimelineFrame.build(trace, window_s, canvas, style)
    img, draw = _new(canvas, canvas.background)
    _draw_axes(draw, frame, trace.space.label, style)
    half = style.fixation_thickness // 2
    axes = ((0, style.x_color, style.x_saccade_color), (1, style.y_color, style.y_saccade_color))
    for axis, fix_color, sac_color in axes:
        for s in saccades:
            v0, v1 = s.start_xy[axis], s.end_xy[axis]
            p0 = (float(frame.px(s.start_t)), float(frame.py(v0)))
            p1 = (float(frame.px(s.end_t)), float(frame.py(v1)))
            _dashed(draw, p0, p1, sac_color, style.saccade_width, style.dash_on, style.dash_off)
        for f in fixations:
            v = f.centroid[axis]
            x0, x1 = round(float(frame.px(f.start_t))), round(float(frame.px(f.end_t)))
            y = round(float(frame.py(v)))
            draw.rectangle([x0, y - half, x1, y - half + style.fixation_thickness - 1], fill=fix_color)
    return _finish(img, VizKind.TIMELINE_FEAT, _meta(window))


# ---------------------------------------------------------------------------
# heatmaps

def heatmap_weights(
    window,
    mode: HeatmapMode | str,
    events=None,
    canvas: Canvas = DEFAULT_CANVAS,
    style: Style = DEFAULT_STYLE,
) -> np.ndarray:
    """Per-cell weights before blurring and normalization, shape ``(rows, cols)``.

    AbsoluteDuration adds one sample period (seconds) per valid sample;
    FixationCount adds one per fixation centroid.
    """
    mode = HeatmapMode(mode)
    trace, _ = _unwrap(window)
    rows = math.ceil(canvas.height / style.cell_px)
    cols = math.ceil(canvas.width / style.cell_px)
    grid = np.zeros((rows, cols), dtype=float)
    if mode is HeatmapMode.ABSOLUTE_DURATION:
        if trace.n_valid == 0:
            raise NoValidSamples("duration heatmap needs at least 1 valid sample")
        xs, ys = trace.x[trace.valid], trace.y[trace.valid]
        weight = trace.period
    else:
        fixations = list(events[0]) if events is not None else []
        if not fixations:
            raise NoFixations("fixation-count heatmap needs at least one fixation")
        xs = np.array([f.x for f in fixations])
        ys = np.array([f.y for f in fixations])
        weight = 1.0
    px, py = to_canvas(xs, ys, trace.space, canvas.size)
    ci = np.minimum((px // style.cell_px).astype(int), cols - 1)
    ri = np.minimum((py // style.cell_px).astype(int), rows - 1)
    np.add.at(grid, (ri, ci), weight)
    return grid


def _heat_colors(v: np.ndarray, background: RGB) -> np.ndarray:
    stops = np.array([0.0, 0.35, 0.65, 1.0])
    ramp = np.array([(0, 160, 255), (0, 255, 128), (255, 255, 0), (255, 0, 0)], dtype=float)
    rgb = np.stack([np.interp(v, stops, ramp[:, c]) for c in range(3)], axis=-1)
    alpha = np.sqrt(np.clip(v, 0.0, 1.0))[..., None]
    out = np.asarray(background, dtype=float) * (1 - alpha) + rgb * alpha
    return np.rint(out).astype(np.uint8)


def render_heatmap(
    window,
    mode: HeatmapMode | str = HeatmapMode.ABSOLUTE_DURATION,
    events=None,
    canvas: Canvas = DEFAULT_CANVAS,
    style: Style = DEFAULT_STYLE,
) -> RenderedImage:
    """Gridded gaze density on a blue background, Gaussian-smoothed on the cell grid."""
    mode = HeatmapMode(mode)
    kind = VizKind.HEATMAP_RAW if mode is HeatmapMode.ABSOLUTE_DURATION else VizKind.HEATMAP_FEAT
    if events is not None:
        trace, span = _unwrap(window)
        _check_events(trace, span, events[0], events[1])
    grid = heatmap_weights(window, mode, events, canvas, style)
    blurred = ndimage.gaussian_filter(grid, sigma=style.blur_sigma_cells, mode="constant", truncate=4.0)
    peak = blurred.max()
    if peak > 0:
        blurred = blurred / peak
    cell = style.cell_px
    yy = (np.arange(canvas.height) + 0.5) / cell - 0.5
    xx = (np.arange(canvas.width) + 0.5) / cell - 0.5
    gy, gx = np.meshgrid(yy, xx, indexing="ij")
    up = ndimage.map_coordinates(blurred, [gy, gx], order=1, mode="nearest")
    pixels = _heat_colors(np.clip(up, 0.0, 1.0), style.heatmap_background)
    return RenderedImage(pixels, kind, _meta(window))


# ---------------------------------------------------------------------------
# scanpaths

def gradient_color(frac: float, style: Style = DEFAULT_STYLE) -> RGB:
    a = np.asarray(style.gradient_start, dtype=float)
    b = np.asarray(style.gradient_end, dtype=float)
    c = np.rint(a + (b - a) * float(np.clip(frac, 0.0, 1.0)))
    return tuple(int(v) for v in c)


def _fractions(times: np.ndarray) -> np.ndarray:
    if len(times) < 2 or times[-1] == times[0]:
        return np.zeros(len(times))
    return (times - times[0]) / (times[-1] - times[0])


def fixation_radius(duration: float, style: Style = DEFAULT_STYLE) -> float:
    return min(style.r_min + style.r_per_s * duration, style.r_max)


def render_scanpath(
    window,
    mode: ScanpathMode | str = ScanpathMode.RAW,
    events=None,
    canvas: Canvas = DEFAULT_CANVAS,
    style: Style = DEFAULT_STYLE,
) -> RenderedImage:
    """Gaze path with a light-to-dark blue temporal gradient.

    Raw mode joins consecutive valid samples; the gradient runs from the first
    drawn segment to the last. Feature mode draws fixations as discs whose
    radius grows linearly with duration, joined by thin saccade lines.
    """
    mode = ScanpathMode(mode)
    trace, span = _unwrap(window)
    img, draw = _new(canvas, canvas.background)
    if mode is ScanpathMode.RAW:
        if trace.n_valid < 2:
            raise TooFewSamples("raw scanpath needs at least 2 valid samples")
        px, py = to_canvas(trace.x, trace.y, trace.space, canvas.size)
        starts = [i for a, b in _valid_runs(trace.valid) for i in range(a, b - 1)]
        if not starts:
            raise TooFewSamples("raw scanpath needs two consecutive valid samples")
        fracs = _fractions(trace.t[starts])
        for i, f in zip(starts, fracs):
            draw.line([(px[i], py[i]), (px[i + 1], py[i + 1])], fill=gradient_color(f, style),
                      width=style.scanpath_line_width)
        return _finish(img, VizKind.SCANPATH_RAW, _meta(window))

    fixations, saccades = events if events is not None else ([], [])
    if not fixations:
        raise NoFixations("feature scanpath needs at least one fixation")
    _check_events(trace, span, fixations, saccades)
    cx, cy = to_canvas([f.x for f in fixations], [f.y for f in fixations], trace.space, canvas.size)
    for k in range(len(fixations) - 1):
        draw.line([(cx[k], cy[k]), (cx[k + 1], cy[k + 1])], fill=style.scanpath_saccade_color, width=1)
    mids = np.array([(f.start_t + f.end_t) / 2 for f in fixations])
    for f, x, y, frac in zip(fixations, cx, cy, _fractions(mids)):
        r = int(round(fixation_radius(f.duration, style)))
        x, y = int(round(x)), int(round(y))
        draw.ellipse([x - r, y - r, x + r - 1, y + r - 1], fill=gradient_color(frac, style))
    return _finish(img, VizKind.SCANPATH_FEAT, _meta(window))


# ---------------------------------------------------------------------------
# dispatch

def render(
    kind: VizKind | str,
    window,
    events=None,
    canvas: Canvas = DEFAULT_CANVAS,
    style: Style = DEFAULT_STYLE,
    lenient: bool = False,
) -> RenderedImage:
    """Render any of the six kinds. With ``lenient``, feature kinds without
    fixations yield a labelled empty image instead of raising."""
    kind = VizKind(kind)
    if kind.needs_events and events is None:
        raise ValueError(f"{kind.value} needs detected events")
    if lenient and kind.needs_events and not events[0]:
        bg = style.heatmap_background if kind is VizKind.HEATMAP_FEAT else canvas.background
        if kind is not VizKind.TIMELINE_FEAT:
            return _no_events(canvas, kind, _meta(window), bg, style)
    if kind is VizKind.TIMELINE_RAW:
        return render_timeline_raw(window, canvas, style)
    if kind is VizKind.TIMELINE_FEAT:
        return render_timeline_feat(window, events, canvas, style)
    if kind is VizKind.HEATMAP_RAW:
        return render_heatmap(window, HeatmapMode.ABSOLUTE_DURATION, None, canvas, style)
    if kind is VizKind.HEATMAP_FEAT:
        return render_heatmap(window, HeatmapMode.FIXATION_COUNT, events, canvas, style)
    if kind is VizKind.SCANPATH_RAW:
        return render_scanpath(window, ScanpathMode.RAW, None, canvas, style)
    return render_scanpath(window, ScanpathMode.FEATURE, events, canvas, style)


def render_confusion_matrix(matrix: np.ndarray, labels: Sequence[str], columns: Sequence[str] | None = None,
                            cell: int = 48) -> RenderedImage:
    """Small confusion-matrix plot: rows are true labels, shade is the row share."""
    matrix = np.asarray(matrix, dtype=float)
    columns = list(columns or labels)
    rows, cols = matrix.shape
    pad = 110
    canvas = Canvas(pad + cols * cell + 10, pad + rows * cell + 10)
    img, draw = _new(canvas, canvas.background)
    font = _font()
    totals = matrix.sum(axis=1, keepdims=True)
    share = np.divide(matrix, totals, out=np.zeros_like(matrix), where=totals > 0)
    for r in range(rows):
        draw.text((4, pad + r * cell + cell // 2 - 6), str(labels[r])[:14], fill=(0, 0, 0), font=font)
        for c in range(cols):
            shade = int(round(255 * (1 - share[r, c])))
            x0, y0 = pad + c * cell, pad + r * cell
            draw.rectangle([x0, y0, x0 + cell - 1, y0 + cell - 1], fill=(shade, shade, 255), outline=(200, 200, 200))
            ink = (255, 255, 255) if share[r, c] > 0.5 else (0, 0, 0)
            draw.text((x0 + 6, y0 + cell // 2 - 6), f"{int(matrix[r, c])}", fill=ink, font=font)
    for c, name in enumerate(columns):
        draw.text((pad + c * cell + 2, pad - 16), str(name)[:3].upper(), fill=(0, 0, 0), font=font)
    return _finish(img, None, {"plot": "confusion"})
