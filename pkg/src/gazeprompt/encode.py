"""Text encodings of gaze windows and the token-cost model."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Union

import numpy as np

from .core import CoordinateSpace, GazeTrace, Unit, WindowInstance
from .errors import ConfigError, NoEvents, NoValidSamples
from .events import Fixation, Saccade, merge_events
from .render import RenderedImage


class TextKind(str, Enum):
    RAW_TEXT = "raw-text"
    FEATURE_TEXT = "feature-text"


@dataclass(frozen=True)
class TextPrompt:
    body: str
    kind: TextKind
    sample_count: int
    downsample_factor: int = 1


def default_decimals(space: CoordinateSpace) -> int:
    return 3 if space.unit is Unit.NORMALIZED else 2


def _trace(window) -> GazeTrace:
    return window.trace if isinstance(window, WindowInstance) else window


def encode_raw_text(window, decimal_places: int | None = None, downsample_factor: int = 1) -> TextPrompt:
    """Valid samples as ``x, y`` lines, keeping every ``downsample_factor``-th one."""
    trace = _trace(window)
    if downsample_factor < 1:
        raise ValueError("downsample_factor must be >= 1")
    if trace.n_valid == 0:
        raise NoValidSamples("raw text needs at least one valid sample")
    dp = default_decimals(trace.space) if decimal_places is None else decimal_places
    xs = trace.x[trace.valid][::downsample_factor]
    ys = trace.y[trace.valid][::downsample_factor]
    body = "\n".join(f"{x:.{dp}f}, {y:.{dp}f}" for x, y in zip(xs.tolist(), ys.tolist()))
    return TextPrompt(body, TextKind.RAW_TEXT, len(xs), downsample_factor)


def format_event(event, dp: int, tdp: int = 2) -> str:
    if isinstance(event, Fixation):
        return f"F(({event.x:.{dp}f}, {event.y:.{dp}f}), {event.duration:.{tdp}f})"
    (x1, y1), (x2, y2) = event.start_xy, event.end_xy
    return f"S(({x1:.{dp}f}, {y1:.{dp}f}) -> ({x2:.{dp}f}, {y2:.{dp}f}), {event.duration:.{tdp}f})"


def encode_feature_text(window, events, decimal_places: int | None = None, duration_places: int = 2) -> TextPrompt:
    """One ``F((X, Y), T)`` or ``S((X1, Y1) -> (X2, Y2), T)`` line per event, in time order.

    Durations are seconds.
    """
    trace = _trace(window)
    fixations, saccades = events
    ordered = merge_events(fixations, saccades)
    if not ordered:
        raise NoEvents("feature text needs at least one event")
    dp = default_decimals(trace.space) if decimal_places is None else decimal_places
    body = "\n".join(format_event(e, dp, duration_places) for e in ordered)
    return TextPrompt(body, TextKind.FEATURE_TEXT, len(ordered))


_NUM = r"(-?\d+(?:\.\d+)?)"
_F_LINE = re.compile(rf"^F\(\({_NUM}, {_NUM}\), {_NUM}\)$")
_S_LINE = re.compile(rf"^S\(\({_NUM}, {_NUM}\) -> \({_NUM}, {_NUM}\), {_NUM}\)$")


def parse_feature_text(body: str) -> list[tuple]:
    """Inverse of the feature-text grammar.

    Returns ``("F", (x, y), t)`` and ``("S", (x1, y1), (x2, y2), t)`` tuples.
    """
    out = []
    for line in body.splitlines():
        if m := _F_LINE.match(line):
            x, y, t = map(float, m.groups())
            out.append(("F", (x, y), t))
        elif m := _S_LINE.match(line):
            x1, y1, x2, y2, t = map(float, m.groups())
            out.append(("S", (x1, y1), (x2, y2), t))
        else:
            raise ValueError(f"not a feature-text line: {line!r}")
    return out


class TokenMode(str, Enum):
    ESTIMATE = "Estimate"
    API_REPORTED = "ApiReported"


@dataclass(frozen=True)
class TokenModel:
    """Pre-flight token estimator.

    Images cost ``base_tokens + tiles * tokens_per_tile`` with
    ``tiles = ceil(w / tile_px) * ceil(h / tile_px)``; the defaults price a
    1024x512 image at 350 tokens. Text costs ``ceil(len / chars_per_token)``.
    In ApiReported mode the estimate is only used for budgeting; recorded
    usage comes from the endpoint.
    """

    tile_px: int = 512
    tokens_per_tile: int = 175
    base_tokens: int = 0
    chars_per_token: float = 4.0
    mode: TokenMode = TokenMode.ESTIMATE

    def __post_init__(self):
        if self.tokens_per_tile < 0 or self.base_tokens < 0:
            raise ConfigError("token counts must be non-negative")
        if self.tile_px <= 0 or self.chars_per_token <= 0:
            raise ConfigError("tile_px and chars_per_token must be positive")
        object.__setattr__(self, "mode", TokenMode(self.mode))

    @classmethod
    def from_dict(cls, d: Mapping) -> "TokenModel":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad token model config: {exc}") from None

    def image_tokens(self, width: int, height: int) -> int:
        tiles = math.ceil(width / self.tile_px) * math.ceil(height / self.tile_px)
        return self.base_tokens + tiles * self.tokens_per_tile

    def text_tokens(self, text: str) -> int:
        return math.ceil(len(text) / self.chars_per_token)


DEFAULT_TOKEN_MODEL = TokenModel()


def estimate_tokens(content: Union[TextPrompt, RenderedImage, str], model: TokenModel = DEFAULT_TOKEN_MODEL) -> int:
    if isinstance(content, RenderedImage):
        return model.image_tokens(content.width, content.height)
    if isinstance(content, TextPrompt):
        return model.text_tokens(content.body)
    if isinstance(content, str):
        return model.text_tokens(content)
    raise TypeError(f"cannot estimate tokens for {type(content).__name__}")


def linear_fit_r2(xs, ys) -> float:
    """Coefficient of determination of a least-squares line through (xs, ys)."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
