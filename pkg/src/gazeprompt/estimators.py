"""scikit-learn compatible wrappers around the pipeline.

Inputs are sequences of :class:`~gazeprompt.core.WindowInstance` (bare
:class:`~gazeprompt.core.GazeTrace` objects are wrapped whole). Outputs of the
transformers are Python lists, since events, images and prompts are not
numeric features.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .client import Backend, TrialMeta, make_backend
from .core import GazeTrace, WindowInstance
from .encode import TextKind, encode_feature_text, encode_raw_text
from .events import IdtParams, idt_detect, idt_oracle
from .prompt import ActivityCatalog, PromptContext, build_user_prompt, parse_response
from .render import Canvas, VizKind, render


def as_windows(X) -> list[WindowInstance]:
    if isinstance(X, (GazeTrace, WindowInstance)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, WindowInstance):
            out.append(item)
        elif isinstance(item, GazeTrace):
            out.append(WindowInstance.whole(item))
        else:
            raise TypeError(f"expected GazeTrace or WindowInstance, got {type(item).__name__}")
    return out


class FixationDetector(TransformerMixin, BaseEstimator):
    """I-DT fixation/saccade detection; ``transform`` yields ``(fixations, saccades)`` per window."""

    def __init__(self, dispersion_threshold: float = 1.0, min_dwell_s: float = 0.2,
                 max_gap_s: float = 0.075, use_oracle: bool = False):
        self.dispersion_threshold = dispersion_threshold
        self.min_dwell_s = min_dwell_s
        self.max_gap_s = max_gap_s
        self.use_oracle = use_oracle

    def fit(self, X, y=None):
        self.params_ = IdtParams(self.dispersion_threshold, self.min_dwell_s, self.max_gap_s)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        detect = idt_oracle if self.use_oracle else idt_detect
        return [detect(w, self.params_) for w in as_windows(X)]


def _events_for(kind_needs_events: bool, window, threshold):
    if not kind_needs_events:
        return None
    if threshold is None:
        raise ValueError("feature representations need dispersion_threshold")
    return idt_detect(window, IdtParams(threshold))


class VisualPromptRenderer(TransformerMixin, BaseEstimator):
    def __init__(self, viz: str = "timeline-raw", dispersion_threshold: float | None = None,
                 width: int = 1024, height: int = 512, lenient: bool = False):
        self.viz = viz
        self.dispersion_threshold = dispersion_threshold
        self.width = width
        self.height = height
        self.lenient = lenient

    def fit(self, X=None, y=None):
        self.kind_ = VizKind(self.viz)
        self.canvas_ = Canvas(self.width, self.height)
        return self

    def transform(self, X):
        check_is_fitted(self, "kind_")
        out = []
        for w in as_windows(X):
            events = _events_for(self.kind_.needs_events, w, self.dispersion_threshold)
            out.append(render(self.kind_, w, events, self.canvas_, lenient=self.lenient))
        return out


class TextPromptEncoder(TransformerMixin, BaseEstimator):
    def __init__(self, kind: str = "raw-text", dispersion_threshold: float | None = None,
                 decimal_places: int | None = None, downsample_factor: int = 1):
        self.kind = kind
        self.dispersion_threshold = dispersion_threshold
        self.decimal_places = decimal_places
        self.downsample_factor = downsample_factor

    def fit(self, X=None, y=None):
        self.kind_ = TextKind(self.kind)
        return self

    def transform(self, X):
        check_is_fitted(self, "kind_")
        out = []
        for w in as_windows(X):
            if self.kind_ is TextKind.RAW_TEXT:
                out.append(encode_raw_text(w, self.decimal_places, self.downsample_factor))
            else:
                events = _events_for(True, w, self.dispersion_threshold)
                out.append(encode_feature_text(w, events, self.decimal_places))
        return out


class PromptedActivityClassifier(ClassifierMixin, BaseEstimator):
    """Activity classifier that asks a multimodal model.

    ``fit`` only records the label set and, when ``shot="one"``, one seeded
    example window per class; there is nothing to train. ``predict`` builds
    a prompt per window and parses the reply (``"Invalid"`` when it cannot).
    """

    def __init__(self, representation: str = "timeline-raw", backend: Backend | str = "mock:random",
                 shot: str = "zero", dispersion_threshold: float | None = None,
                 catalog: ActivityCatalog | None = None, seed: int = 0):
        self.representation = representation
        self.backend = backend
        self.shot = shot
        self.dispersion_threshold = dispersion_threshold
        self.catalog = catalog
        self.seed = seed

    def _content(self, window):
        if self.representation in {k.value for k in TextKind}:
            enc = TextPromptEncoder(self.representation, self.dispersion_threshold).fit()
            return enc.transform([window])[0]
        rend = VisualPromptRenderer(self.representation, self.dispersion_threshold, lenient=True).fit()
        return rend.transform([window])[0]

    def fit(self, X, y):
        windows = as_windows(X)
        y = np.asarray(y, dtype=object)
        if len(windows) != len(y):
            raise ValueError(f"X has {len(windows)} windows but y has {len(y)} labels")
        if len(windows) == 0:
            raise ValueError("fit needs at least one window")
        self.classes_ = np.array(sorted(set(y.tolist())), dtype=object)
        self.catalog_ = self.catalog or ActivityCatalog.generic(list(self.classes_))
        self.catalog_.check_against(list(self.classes_))
        self.backend_ = make_backend(self.backend) if isinstance(self.backend, str) else self.backend
        self.examples_ = None
        if self.shot == "one":
            rng = np.random.default_rng(self.seed)
            self.examples_ = {}
            for label in self.classes_:
                idx = np.flatnonzero(y == label)
                self.examples_[label] = self._content(windows[int(rng.choice(idx))])
        elif self.shot != "zero":
            raise ValueError(f"shot must be 'zero' or 'one', not {self.shot!r}")
        return self

    def predict(self, X, y_true: Sequence[str] | None = None):
        """Predicted labels. ``y_true`` is forwarded to the backend as trial metadata
        (only the oracle mock uses it)."""
        check_is_fitted(self, "classes_")
        windows = as_windows(X)
        preds = []
        for i, w in enumerate(windows):
            bundle = build_user_prompt(
                self._content(w), self.catalog_, PromptContext(w.trace.rate_hz, w.window_s, unit=w.trace.space.label),
                self.examples_, seed=self.seed + i,
            )
            meta = TrialMeta(f"{w.source_id}@{w.start_s:g}#{i}",
                             None if y_true is None else y_true[i], tuple(self.catalog_.labels))
            preds.append(parse_response(self.backend_.complete(bundle, meta).text, self.catalog_).predicted_label)
        return np.array(preds, dtype=object)
