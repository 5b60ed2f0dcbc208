"""Five-segment HAR prompt assembly and response parsing.

User prompts are built in the fixed segment order Instruction, Activity
Descriptions, Context, Examples (one-shot only) and Question. The order of
activity descriptions and of examples are two independent permutations drawn
from the bundle seed.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .encode import DEFAULT_TOKEN_MODEL, TextKind, TextPrompt, TokenModel, estimate_tokens
from .errors import ConfigError, ExampleLabelMismatch
from .render import RenderedImage, VizKind

INVALID = "Invalid"


class Modality(str, Enum):
    VISUAL = "Visual"
    TEXTUAL = "Textual"


class Shot(str, Enum):
    ZERO = "zero"
    ONE = "one"


class Segment(str, Enum):
    INSTRUCTION = "Instruction"
    ACTIVITY_DESCRIPTIONS = "ActivityDescriptions"
    CONTEXT = "Context"
    EXAMPLES = "Examples"
    QUESTION = "Question"


SEGMENT_ORDER = list(Segment)


@dataclass(frozen=True)
class ActivityCatalog:
    name: str
    entries: tuple[tuple[str, str], ...]
    device_note: str = ""

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise ConfigError("catalog labels must be unique")

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]

    def description(self, label: str) -> str:
        return dict(self.entries)[label]

    def check_against(self, class_labels: Sequence[str]):
        if set(self.labels) != set(class_labels) or len(self.labels) != len(class_labels):
            raise ConfigError(f"catalog labels {self.labels} do not match dataset labels {list(class_labels)}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActivityCatalog":
        entries = tuple((e["label"], e["description"]) for e in d["entries"])
        return cls(d.get("name", ""), entries, d.get("device_note", ""))

    @classmethod
    def load(cls, path: str | Path) -> "ActivityCatalog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def builtin(cls, name: str) -> "ActivityCatalog":
        ref = resources.files("gazeprompt") / "assets" / "catalogs" / f"{name}.json"
        if not ref.is_file():
            raise ConfigError(f"no built-in activity catalog for {name!r}")
        return cls.from_dict(json.loads(ref.read_text(encoding="utf-8")))

    @classmethod
    def generic(cls, labels: Sequence[str], name: str = "custom") -> "ActivityCatalog":
        return cls(name, tuple((label, f"The participant performs the activity '{label}'.") for label in labels))


@dataclass(frozen=True)
class PromptContext:
    rate_hz: float
    window_s: float
    device_note: str = ""
    unit: str = ""


@dataclass(frozen=True)
class Part:
    segment: Segment
    content: Union[str, RenderedImage]
    detail: str = "high"

    @property
    def type(self) -> str:
        return "image" if isinstance(self.content, RenderedImage) else "text"


@dataclass(frozen=True, eq=False)
class PromptBundle:
    system: str
    user_parts: tuple[Part, ...]
    shot: Shot
    condition: str
    seed: int
    token_estimate: int
    example_labels: tuple[str, ...] = ()
    description_labels: tuple[str, ...] = ()

    @property
    def images(self) -> list[RenderedImage]:
        return [p.content for p in self.user_parts if p.type == "image"]

    def segment_parts(self, segment: Segment) -> list[Part]:
        return [p for p in self.user_parts if p.segment is segment]

    def to_dict(self, image_paths: Mapping[str, str] | None = None) -> dict:
        """JSON document form. Images are referenced by path, or by content
        digest when no path map is given."""
        parts = []
        for p in self.user_parts:
            if p.type == "image":
                ref = image_paths[p.content.digest] if image_paths else f"{p.content.digest}.png"
                parts.append({"type": "image", "path": ref, "detail": p.detail})
            else:
                parts.append({"type": "text", "text": p.content})
        return {"system": self.system, "parts": parts, "seed": self.seed}

    def to_json(self, image_paths: Mapping[str, str] | None = None) -> str:
        return json.dumps(self.to_dict(image_paths), ensure_ascii=False, indent=2)

    def write(self, path: str | Path, image_dir: str | Path | None = None) -> Path:
        """Write the bundle JSON and its images (named by content digest)."""
        path = Path(path)
        image_dir = Path(image_dir) if image_dir is not None else path.parent / "images"
        image_dir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for img in self.images:
            target = image_dir / f"{img.digest}.png"
            if not target.exists():
                img.save(target)
            paths[img.digest] = str(target)
        path.write_text(self.to_json(paths), encoding="utf-8")
        return path

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


_MODALITY_CLAUSE = {
    Modality.VISUAL: "You will receive visualizations of eye-tracking data as images.",
    Modality.TEXTUAL: "You will receive numerical eye-tracking data as text.",
}


def build_system_prompt(catalog: ActivityCatalog, modality: Modality | str) -> str:
    modality = Modality(modality)
    return (
        "You are a domain expert in eye-tracking activity recognition. "
        f"{_MODALITY_CLAUSE[modality]} "
        f"Your task is to identify which of {len(catalog.labels)} activities the person was performing. "
        'Respond with a single JSON object with the keys "activity" (one activity label, spelled exactly '
        'as listed) and "reason" (a short explanation of your decision).'
    )


REPRESENTATION_NOTES = {
    VizKind.TIMELINE_RAW.value: "Each image is a timeline plot: horizontal gaze position (x, orange) and vertical gaze position (y, blue) over time.",
    VizKind.TIMELINE_FEAT.value: "Each image is a timeline of gaze events: fixations are thick solid bars at the fixated x (orange) and y (blue) position, saccades are dashed lines.",
    VizKind.HEATMAP_RAW.value: "Each image is a heatmap of gaze dwell time over the screen on a blue background; warmer colours mean longer dwell.",
    VizKind.HEATMAP_FEAT.value: "Each image is a heatmap of fixation counts over the screen on a blue background; warmer colours mean more fixations.",
    VizKind.SCANPATH_RAW.value: "Each image is a raw scanpath: the gaze trajectory on screen, coloured from light blue (start) to dark blue (end).",
    VizKind.SCANPATH_FEAT.value: "Each image is a scanpath of fixations: circles sized by fixation duration, coloured from light blue (early) to dark blue (late), joined by saccade lines.",
    TextKind.RAW_TEXT.value: "Each sample is a sequence of gaze coordinates, one 'x, y' pair per line in time order.",
    TextKind.FEATURE_TEXT.value: "Each sample is a sequence of gaze events in time order: F((x, y), t) is a fixation at (x, y) lasting t seconds and S((x1, y1) -> (x2, y2), t) is a saccade lasting t seconds.",
}


def _condition_of(target) -> tuple[str, Modality]:
    if isinstance(target, RenderedImage):
        return (target.kind.value if target.kind else "image"), Modality.VISUAL
    if isinstance(target, TextPrompt):
        return target.kind.value, Modality.TEXTUAL
    raise TypeError(f"unsupported prompt target {type(target).__name__}")


def _as_content(item) -> Union[str, RenderedImage]:
    return item if isinstance(item, RenderedImage) else item.body


def build_user_prompt(
    target: Union[RenderedImage, TextPrompt],
    catalog: ActivityCatalog,
    context: PromptContext,
    examples: Mapping[str, Union[RenderedImage, TextPrompt]] | None = None,
    seed: int = 0,
    token_model: TokenModel = DEFAULT_TOKEN_MODEL,
) -> PromptBundle:
    """Assemble a complete bundle (system prompt plus ordered user parts)."""
    examples = dict(examples or {})
    labels = catalog.labels
    if examples and set(examples) != set(labels):
        raise ExampleLabelMismatch(
            f"example labels {sorted(examples)} differ from catalog labels {sorted(labels)}"
        )
    condition, modality = _condition_of(target)
    rng = np.random.default_rng(seed)
    desc_order = [labels[i] for i in rng.permutation(len(labels))]
    example_order = [labels[i] for i in rng.permutation(len(labels))]

    noun = "visualization" if modality is Modality.VISUAL else "eye-tracking sample"
    parts = [
        Part(Segment.INSTRUCTION,
             "Instruction: As an expert in eye-tracking activity recognition, determine which activity the "
             f"participant was performing from the {noun} in the Question. "
             + REPRESENTATION_NOTES.get(condition, "")),
        Part(Segment.ACTIVITY_DESCRIPTIONS,
             "Activity Descriptions:\n" + "\n".join(f"- {lb}: {catalog.description(lb)}" for lb in desc_order)),
    ]
    ctx = f"Context: Gaze was sampled at {context.rate_hz:g} Hz"
    device = context.device_note or catalog.device_note
    if device:
        ctx += f" using {device}"
    ctx += f". Each {noun} covers a {context.window_s:g}-second window."
    if context.unit:
        ctx += f" Coordinates are in {context.unit}."
    parts.append(Part(Segment.CONTEXT, ctx))

    shot = Shot.ONE if examples else Shot.ZERO
    if examples:
        parts.append(Part(Segment.EXAMPLES, f"Examples: one labelled {noun} per activity."))
        for label in example_order:
            parts.append(Part(Segment.EXAMPLES, f"Example ({label}):"))
            parts.append(Part(Segment.EXAMPLES, _as_content(examples[label])))
    else:
        example_order = []

    parts.append(Part(Segment.QUESTION,
                      f"Question: Which activity was the participant performing in the following {noun}? "
                      'Answer with a JSON object {"activity": ..., "reason": ...}.'))
    parts.append(Part(Segment.QUESTION, _as_content(target)))

    system = build_system_prompt(catalog, modality)
    tokens = estimate_tokens(system, token_model) + sum(
        estimate_tokens(p.content, token_model) for p in parts
    )
    return PromptBundle(system, tuple(parts), shot, condition, int(seed), tokens,
                        tuple(example_order), tuple(desc_order))


@dataclass(frozen=True)
class ParsedResponse:
    predicted_label: str
    reason: str
    raw: str

    @property
    def valid(self) -> bool:
        return self.predicted_label != INVALID


def _json_objects(raw: str):
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", raw):
        try:
            obj, _ = decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            yield obj


def _scan_labels(text: str, labels: Sequence[str]) -> set[str]:
    found = set()
    for label in labels:
        if re.search(rf"(?<!\w){re.escape(label)}(?!\w)", text, flags=re.IGNORECASE):
            found.add(label)
    # a label that only appears inside a longer matched label does not count
    return {a for a in found if not any(a != b and a.lower() in b.lower() for b in found)}


def parse_response(raw: str, catalog: ActivityCatalog | Sequence[str]) -> ParsedResponse:
    """Extract the predicted label from a model reply.

    A JSON object with an ``activity`` key wins; otherwise the reply is scanned
    for whole-word, case-insensitive label mentions and exactly one distinct
    label must appear. Anything else is ``Invalid``.
    """
    labels = catalog.labels if isinstance(catalog, ActivityCatalog) else list(catalog)
    by_lower = {label.lower(): label for label in labels}
    for obj in _json_objects(raw):
        if "activity" in obj:
            value = str(obj["activity"]).strip()
            reason = str(obj.get("reason", ""))
            if value.lower() in by_lower:
                return ParsedResponse(by_lower[value.lower()], reason, raw)
            hits = _scan_labels(value, labels)
            if len(hits) == 1:
                return ParsedResponse(hits.pop(), reason, raw)
            return ParsedResponse(INVALID, reason, raw)
    hits = _scan_labels(raw, labels)
    if len(hits) == 1:
        return ParsedResponse(hits.pop(), "", raw)
    return ParsedResponse(INVALID, "", raw)
