"""Experiment protocol: participant splits, trial sampling, execution and scoring.

A run directory holds ``plan.json``, an append-only ``records.jsonl`` (one
:class:`TrialRecord` per line), ``summary.csv``, one
``confusion_<condition>.csv`` per condition and an ``images/`` cache keyed
by content digest. Re-running a plan into the same directory skips trial ids
that are already recorded.
"""
from __future__ import annotations

import csv
import glob
import hashlib
import json
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, as_completed, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .client import Backend, TrialMeta
from .core import DatasetSpec, GazeTrace, WindowInstance, iter_windows, ingest_many
from .encode import DEFAULT_TOKEN_MODEL, TextKind, TokenModel, encode_feature_text, encode_raw_text, estimate_tokens
from .errors import AuthError, ConfigError, DataError, GazePromptError, InsufficientData, PoolTooLarge, TransportError
from .events import IdtParams, idt_detect
from .prompt import INVALID, ActivityCatalog, PromptContext, Shot, build_user_prompt, parse_response
from .render import DEFAULT_CANVAS, DEFAULT_STYLE, Canvas, Style, VizKind, render, render_confusion_matrix
from .synth import synthetic_dataset

log = logging.getLogger(__name__)

VISUAL_REPRESENTATIONS = tuple(k.value for k in VizKind)
TEXT_REPRESENTATIONS = tuple(k.value for k in TextKind)
REPRESENTATIONS = VISUAL_REPRESENTATIONS + TEXT_REPRESENTATIONS
FEATURE_REPRESENTATIONS = (
    VizKind.TIMELINE_FEAT.value, VizKind.HEATMAP_FEAT.value, VizKind.SCANPATH_FEAT.value,
    TextKind.FEATURE_TEXT.value,
)


def derive_seed(master: int, *keys) -> int:
    """Counter-style seed split: hash of the master seed and the given keys."""
    h = hashlib.sha256(("|".join([str(master), *map(str, keys)])).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") >> 1


@dataclass(frozen=True)
class Condition:
    representation: str
    shot: Shot

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}")
        object.__setattr__(self, "shot", Shot(self.shot))

    @property
    def visual(self) -> bool:
        return self.representation in VISUAL_REPRESENTATIONS

    @property
    def key(self) -> str:
        return f"{self.representation}_{self.shot.value}"


def all_conditions(shots: Sequence[Shot | str] = (Shot.ZERO, Shot.ONE)) -> tuple[Condition, ...]:
    return tuple(Condition(r, Shot(s)) for s in shots for r in REPRESENTATIONS)


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: DatasetSpec
    conditions: tuple[Condition, ...]
    window_sizes: tuple[float, ...] = (10.0,)
    trials_per_class: int = 30
    example_pool_size: int = 0
    master_seed: int = 0
    # where traces come from: {"synthetic": {...}} or {"paths": [glob, ...]}
    data: Mapping = field(default_factory=dict)
    per_trial_examples: bool = False
    catalog: str | None = None

    def __post_init__(self):
        if self.trials_per_class < 1:
            raise ConfigError("trials_per_class must be >= 1")
        if not self.conditions:
            raise ConfigError("plan has no conditions")
        if any(w <= 0 for w in self.window_sizes):
            raise ConfigError("window sizes must be positive")
        if self.example_pool_size < 0:
            raise ConfigError("example_pool_size must be >= 0")
        if self.example_pool_size == 0 and any(c.shot is Shot.ONE for c in self.conditions):
            raise ConfigError("one-shot conditions need example_pool_size >= 1")

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "conditions": [{"representation": c.representation, "shot": c.shot.value} for c in self.conditions],
            "window_sizes": list(self.window_sizes),
            "trials_per_class": self.trials_per_class,
            "example_pool_size": self.example_pool_size,
            "master_seed": self.master_seed,
            "data": dict(self.data),
            "per_trial_examples": self.per_trial_examples,
            "catalog": self.catalog,
        }

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None) -> "ExperimentPlan":
        from .core import BUILTIN_SPECS, load_dataset_spec

        ds = d.get("dataset")
        if isinstance(ds, str) and ds in BUILTIN_SPECS:
            dataset = BUILTIN_SPECS[ds]()
        elif isinstance(ds, str):
            p = Path(ds)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            dataset = load_dataset_spec(p)
        elif isinstance(ds, Mapping):
            dataset = DatasetSpec.from_dict(ds)
        else:
            raise ConfigError("plan needs a dataset (inline object or config path)")
        conds = d.get("conditions", "all")
        if conds == "all":
            conditions = all_conditions()
        else:
            conditions = tuple(
                Condition(c["representation"], Shot(c["shot"])) if isinstance(c, Mapping)
                else Condition(*c) for c in conds
            )
        data = dict(d.get("data", {}))
        if base_dir is not None and "paths" in data:
            data["paths"] = [p if Path(p).is_absolute() else str(base_dir / p) for p in data["paths"]]
        return cls(
            dataset=dataset,
            conditions=conditions,
            window_sizes=tuple(float(w) for w in d.get("window_sizes", (10.0,))),
            trials_per_class=int(d.get("trials_per_class", 30)),
            example_pool_size=int(d.get("example_pool_size", 0)),
            master_seed=int(d.get("master_seed", 0)),
            data=data,
            per_trial_examples=bool(d.get("per_trial_examples", False)),
            catalog=d.get("catalog"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        from .core import load_config_file

        path = Path(path)
        return cls.from_dict(load_config_file(path), base_dir=path.parent)


def load_traces(plan: ExperimentPlan) -> list[GazeTrace]:
    """Traces named by ``plan.data``."""
    data = plan.data
    spec = plan.dataset
    if "synthetic" in data:
        opts = dict(data["synthetic"])
        n = opts.pop("n_participants", len(spec.participants))
        _, traces = synthetic_dataset(
            spec.class_labels, n, rate_hz=spec.rate_hz, space=spec.space, name=spec.name,
            dispersion_threshold=spec.dispersion_threshold, seed=opts.pop("seed", plan.master_seed), **opts,
        )
        return traces
    if "paths" in data:
        files = sorted({f for pattern in data["paths"] for f in glob.glob(pattern)})
        if not files:
            raise DataError(f"no files match {data['paths']}")
        return ingest_many(files, spec)
    raise ConfigError('plan.data must contain "synthetic" or "paths"')


def resolve_catalog(plan: ExperimentPlan) -> ActivityCatalog:
    if plan.catalog:
        path = Path(plan.catalog)
        catalog = ActivityCatalog.load(path) if path.exists() else ActivityCatalog.builtin(plan.catalog)
    else:
        try:
            catalog = ActivityCatalog.builtin(plan.dataset.name)
        except ConfigError:
            catalog = ActivityCatalog.generic(plan.dataset.class_labels, plan.dataset.name)
    catalog.check_against(plan.dataset.class_labels)
    return catalog


# ---------------------------------------------------------------------------
# splitting and sampling

def split_participants(spec: DatasetSpec | Sequence[str], pool_size: int, seed: int) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Seeded draw of ``pool_size`` example participants; the rest are test participants."""
    participants = sorted(spec.participants if isinstance(spec, DatasetSpec) else spec)
    if pool_size >= len(participants):
        raise PoolTooLarge(f"pool of {pool_size} leaves no test participants out of {len(participants)}")
    if pool_size < 0:
        raise ValueError("pool_size must be >= 0")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(participants), size=pool_size, replace=False).tolist()) if pool_size else set()
    pool = tuple(p for i, p in enumerate(participants) if i in chosen)
    test = tuple(p for i, p in enumerate(participants) if i not in chosen)
    assert not set(pool) & set(test)
    return pool, test


@dataclass(frozen=True, eq=False)
class TrialSpec:
    trial_id: str
    condition: Condition
    window_s: float
    target: WindowInstance
    seed: int
    examples: Mapping[str, WindowInstance] | None = None
    example_participant: str | None = None

    @property
    def true_label(self) -> str:
        return self.target.activity


def _windows_by(traces: Iterable[GazeTrace], participants: set[str], window_s: float):
    out: dict[str, dict[str, list[WindowInstance]]] = defaultdict(lambda: defaultdict(list))
    for w in iter_windows([t for t in traces if t.participant in participants], window_s):
        out[w.participant][w.activity].append(w)
    return out


def _draw_examples(by_participant, pool: Sequence[str], labels: Sequence[str], rng) -> tuple[str, dict]:
    order = [pool[i] for i in rng.permutation(len(pool))]
    chosen = order[0]
    examples = {}
    for label in labels:
        for p in [chosen, *[q for q in order if q != chosen]]:
            cands = by_participant.get(p, {}).get(label)
            if cands:
                examples[label] = cands[int(rng.integers(len(cands)))]
                break
        else:
            raise InsufficientData(label, f"no example window for class {label!r} in the example pool")
    return chosen, examples


def sample_trials(plan: ExperimentPlan, traces: Sequence[GazeTrace], test_set: Sequence[str],
                  pool: Sequence[str] = ()) -> list[TrialSpec]:
    """Exactly ``trials_per_class`` targets per class for every (condition, window size).

    Targets are shared across conditions at a given window size. One-shot
    examples come from one pool participant drawn per run (or per trial when
    ``plan.per_trial_examples``).
    """
    if set(pool) & set(test_set):
        raise ConfigError("example pool and test participants overlap")
    labels = plan.dataset.class_labels
    needs_examples = any(c.shot is Shot.ONE for c in plan.conditions)
    trials = []
    for window_s in plan.window_sizes:
        by_p = _windows_by(traces, set(test_set), window_s)
        targets: dict[str, list[WindowInstance]] = {}
        for label in labels:
            cands = [w for p in sorted(by_p) for w in by_p[p].get(label, [])]
            if not cands:
                raise InsufficientData(label, f"no {window_s:g}s window for class {label!r} among test participants")
            rng = np.random.default_rng(derive_seed(plan.master_seed, "targets", window_s, label))
            picks = []
            while len(picks) < plan.trials_per_class:
                picks.extend(rng.permutation(len(cands)).tolist())
            targets[label] = [cands[i] for i in picks[:plan.trials_per_class]]

        run_examples = None
        pool_windows = _windows_by(traces, set(pool), window_s) if needs_examples else {}
        if needs_examples and not plan.per_trial_examples:
            rng = np.random.default_rng(derive_seed(plan.master_seed, "examples", window_s))
            run_examples = _draw_examples(pool_windows, list(pool), labels, rng)

        for cond in plan.conditions:
            for label in labels:
                for i, target in enumerate(targets[label]):
                    tid = f"{cond.representation}/{cond.shot.value}/w{window_s:g}/{label}/{i:03d}"
                    seed = derive_seed(plan.master_seed, tid)
                    ex_p, examples = None, None
                    if cond.shot is Shot.ONE:
                        if run_examples is not None:
                            ex_p, examples = run_examples
                        else:
                            rng = np.random.default_rng(derive_seed(plan.master_seed, "examples", tid))
                            ex_p, examples = _draw_examples(pool_windows, list(pool), labels, rng)
                    trials.append(TrialSpec(tid, cond, window_s, target, seed, examples, ex_p))
    return trials


# ---------------------------------------------------------------------------
# records

@dataclass
class TrialRecord:
    trial_id: str
    dataset: str
    condition: str
    shot: str
    window_s: float
    seed: int
    participant: str
    true_label: str
    predicted_label: str
    valid: bool
    prompt_tokens_est: int | None = None
    completion_tokens_est: int | None = None
    prompt_tokens_reported: int | None = None
    completion_tokens_reported: int | None = None
    latency_s: float | None = None
    attempts: int | None = None
    example_participant: str | None = None
    target_origin: list | None = None
    reason: str = ""
    raw: str = ""
    error: str | None = None
    retryable: bool = False  # transport failure; a resumed run tries the trial again

    @property
    def correct(self) -> bool:
        return self.valid and self.predicted_label == self.true_label

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialRecord":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def read_records(path: str | Path) -> list[TrialRecord]:
    """Records from a JSON-lines file, one per trial id (the last line wins).

    A truncated trailing line is ignored.
    """
    path = Path(path)
    if not path.exists():
        return []
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            rec = TrialRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, TypeError):
            log.warning("ignoring unreadable record line in %s", path)
            continue
        out.pop(rec.trial_id, None)
        out[rec.trial_id] = rec
    return list(out.values())


@dataclass
class Preparer:
    """Turns windows into prompt content, caching per window and representation."""

    spec: DatasetSpec
    canvas: Canvas = DEFAULT_CANVAS
    style: Style = DEFAULT_STYLE
    lenient: bool = True
    decimal_places: int | None = None
    image_dir: Path | None = None
    _events: dict = field(default_factory=dict)
    _content: dict = field(default_factory=dict)

    def events(self, window: WindowInstance):
        key = window.origin
        if key not in self._events:
            self._events[key] = idt_detect(window, IdtParams(self.spec.dispersion_threshold))
        return self._events[key]

    def content(self, window: WindowInstance, representation: str):
        key = (window.origin, window.window_s, representation)
        if key in self._content:
            return self._content[key]
        events = self.events(window) if representation in FEATURE_REPRESENTATIONS else None
        if representation == TextKind.RAW_TEXT.value:
            item = encode_raw_text(window, self.decimal_places, self.spec.downsample_raw_text)
        elif representation == TextKind.FEATURE_TEXT.value:
            item = encode_feature_text(window, events, self.decimal_places)
        else:
            item = render(representation, window, events, self.canvas, self.style, lenient=self.lenient)
            if self.image_dir is not None:
                target = self.image_dir / f"{item.digest}.png"
                if not target.exists():
                    item.save(target)
        self._content[key] = item
        return item


def _prepare(trial: TrialSpec, plan: ExperimentPlan, catalog: ActivityCatalog, prep: Preparer,
             token_model: TokenModel):
    cond = trial.condition
    rec = TrialRecord(
        trial_id=trial.trial_id, dataset=plan.dataset.name, condition=cond.representation,
        shot=cond.shot.value, window_s=trial.window_s, seed=trial.seed,
        participant=trial.target.participant, true_label=trial.true_label,
        predicted_label=INVALID, valid=False, example_participant=trial.example_participant,
        target_origin=list(trial.target.origin),
    )
    try:
        target = prep.content(trial.target, cond.representation)
        examples = None
        if trial.examples:
            examples = {lb: prep.content(w, cond.representation) for lb, w in trial.examples.items()}
        context = PromptContext(plan.dataset.rate_hz, trial.window_s, unit=plan.dataset.space.label)
        bundle = build_user_prompt(target, catalog, context, examples, trial.seed, token_model)
    except ConfigError:
        raise
    except GazePromptError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec, None
    rec.prompt_tokens_est = bundle.token_estimate
    return rec, bundle


def _query(rec: TrialRecord, bundle, catalog: ActivityCatalog, backend: Backend,
           token_model: TokenModel) -> TrialRecord:
    if bundle is None:
        return rec
    try:
        completion = backend.complete(bundle, TrialMeta(rec.trial_id, rec.true_label, tuple(catalog.labels)))
    except (AuthError, ConfigError):
        raise
    except TransportError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.retryable = True
        return rec
    except GazePromptError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    parsed = parse_response(completion.text, catalog)
    rec.predicted_label = parsed.predicted_label
    rec.valid = parsed.valid
    rec.reason = parsed.reason
    rec.raw = completion.text
    rec.completion_tokens_est = estimate_tokens(completion.text, token_model)
    rec.prompt_tokens_reported = completion.prompt_tokens
    rec.completion_tokens_reported = completion.completion_tokens
    rec.latency_s = completion.latency_s
    rec.attempts = completion.attempts
    return rec


def run(
    plan: ExperimentPlan,
    backend: Backend,
    run_dir: str | Path,
    traces: Sequence[GazeTrace] | None = None,
    catalog: ActivityCatalog | None = None,
    token_model: TokenModel = DEFAULT_TOKEN_MODEL,
    canvas: Canvas = DEFAULT_CANVAS,
    style: Style = DEFAULT_STYLE,
    limit: int | None = None,
    save_images: bool = True,
) -> list[TrialRecord]:
    """Execute a plan, appending to ``run_dir/records.jsonl``; returns all records.

    Trials already present in the records file are skipped, so an interrupted
    run resumes where it stopped. ``limit`` caps the number of new trials.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    plan_path = run_dir / "plan.json"
    plan_json = json.dumps(plan.to_dict(), indent=2, sort_keys=True)
    if plan_path.exists() and plan_path.read_text(encoding="utf-8") != plan_json:
        raise ConfigError(f"{plan_path} holds a different plan; use a fresh run directory")
    plan_path.write_text(plan_json, encoding="utf-8")

    catalog = catalog or resolve_catalog(plan)
    if traces is None:
        traces = load_traces(plan)
    pool, test = split_participants(plan.dataset, plan.example_pool_size, plan.master_seed)
    trials = sample_trials(plan, traces, test, pool)

    records_path = run_dir / "records.jsonl"
    existing = read_records(records_path)
    done = {r.trial_id for r in existing if not r.retryable}
    todo = [t for t in trials if t.trial_id not in done]
    if limit is not None:
        todo = todo[:limit]
    image_dir = None
    if save_images:
        image_dir = run_dir / "images"
        image_dir.mkdir(exist_ok=True)
    prep = Preparer(plan.dataset, canvas, style, image_dir=image_dir)
    log.info("run: %d trials planned, %d already recorded, %d to do", len(trials), len(done), len(todo))

    # a truncated final line from a killed run must not swallow the next record
    if records_path.exists():
        raw = records_path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            records_path.write_bytes(raw[: raw.rfind(b"\n") + 1])

    new = []
    with open(records_path, "a", encoding="utf-8") as out:
        def emit(rec):
            out.write(rec.to_json() + "\n")
            out.flush()
            new.append(rec)

        workers = max(1, int(getattr(backend, "max_concurrent", 1)))
        if workers == 1:
            for trial in todo:
                emit(_query(*_prepare(trial, plan, catalog, prep, token_model), catalog, backend, token_model))
        else:
            # rendering stays on this thread (shared caches); only model calls fan out
            with ThreadPoolExecutor(max_workers=workers) as pool_exec:
                futures = set()
                for trial in todo:
                    rec, bundle = _prepare(trial, plan, catalog, prep, token_model)
                    futures.add(pool_exec.submit(_query, rec, bundle, catalog, backend, token_model))
                    if len(futures) >= 4 * workers:
                        done_now, futures = wait(futures, return_when=FIRST_COMPLETED)
                        for fut in done_now:
                            emit(fut.result())
                for fut in as_completed(futures):
                    emit(fut.result())
    by_id = {r.trial_id: r for r in existing}
    for r in new:
        by_id[r.trial_id] = r
    return list(by_id.values())


# ---------------------------------------------------------------------------
# scoring

@dataclass
class ConditionScore:
    condition: str
    shot: str
    window_s: float
    n: int
    correct: int
    invalid: int
    confusion: np.ndarray
    prompt_tokens_est_mean: float | None
    prompt_tokens_reported_mean: float | None
    completion_tokens_reported_mean: float | None

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    @property
    def key(self) -> str:
        return f"{self.condition}_{self.shot}_w{self.window_s:g}"


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class Report:
    labels: tuple[str, ...]
    scores: dict[str, ConditionScore]

    @property
    def columns(self) -> tuple[str, ...]:
        return (*self.labels, INVALID)

    def accuracy(self, condition: str, shot: str | None = None, window_s: float | None = None) -> float:
        return self._one(condition, shot, window_s).accuracy

    def confusion(self, condition: str, shot: str | None = None, window_s: float | None = None) -> np.ndarray:
        return self._one(condition, shot, window_s).confusion

    def _one(self, condition, shot, window_s) -> ConditionScore:
        hits = [s for s in self.scores.values() if s.condition == condition
                and (shot is None or s.shot == shot) and (window_s is None or s.window_s == window_s)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} scores match {condition}/{shot}/{window_s}")
        return hits[0]

    def token_table(self, estimated: bool = True) -> dict[tuple[str, str], dict[float, float]]:
        """Mean prompt tokens as ``{(condition, shot): {window_s: mean}}``."""
        table: dict[tuple[str, str], dict[float, float]] = defaultdict(dict)
        for s in self.scores.values():
            v = s.prompt_tokens_est_mean if estimated else s.prompt_tokens_reported_mean
            if v is not None:
                table[(s.condition, s.shot)][s.window_s] = v
        return dict(table)

    def multipliers(self, estimated: bool = True) -> dict[tuple[str, str, float], float]:
        """Mean text-prompt tokens over mean visual-prompt tokens per (text condition, shot, window)."""
        visual = defaultdict(list)
        text = {}
        for s in self.scores.values():
            v = s.prompt_tokens_est_mean if estimated else s.prompt_tokens_reported_mean
            if v is None:
                continue
            if s.condition in VISUAL_REPRESENTATIONS:
                visual[(s.shot, s.window_s)].append(v)
            else:
                text[(s.condition, s.shot, s.window_s)] = v
        out = {}
        for (cond, shot, w), v in text.items():
            if visual.get((shot, w)):
                out[(cond, shot, w)] = v / float(np.mean(visual[(shot, w)]))
        return out

    def write(self, run_dir: str | Path, plots: bool = False) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "shot", "window_s", "n", "correct", "accuracy", "invalid",
                        "prompt_tokens_est_mean", "prompt_tokens_reported_mean", "completion_tokens_reported_mean"])
            for s in sorted(self.scores.values(), key=lambda s: (s.shot, s.window_s, s.condition)):
                w.writerow([s.condition, s.shot, f"{s.window_s:g}", s.n, s.correct, f"{s.accuracy:.4f}", s.invalid,
                            _fmt(s.prompt_tokens_est_mean), _fmt(s.prompt_tokens_reported_mean),
                            _fmt(s.completion_tokens_reported_mean)])
        mult = self.multipliers()
        if mult:
            with open(run_dir / "multipliers.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["condition", "shot", "window_s", "text_over_visual"])
                for (cond, shot, win), m in sorted(mult.items()):
                    w.writerow([cond, shot, f"{win:g}", f"{m:.3f}"])
        for s in self.scores.values():
            with open(run_dir / f"confusion_{s.key}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["true\\pred", *self.columns])
                for label, row in zip(self.labels, s.confusion):
                    w.writerow([label, *[int(v) for v in row]])
            if plots:
                render_confusion_matrix(s.confusion, self.labels, self.columns).save(run_dir / f"confusion_{s.key}.png")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.2f}"


def score(records: Sequence[TrialRecord], labels: Sequence[str] | None = None) -> Report:
    """Accuracy, confusion matrices (with an Invalid column) and token means per condition.

    Invalid predictions count as misclassifications.
    """
    if not records:
        raise ValueError("no records to score")
    if labels is None:
        labels = sorted({r.true_label for r in records})
    labels = tuple(labels)
    col = {label: i for i, label in enumerate(labels)}
    groups = defaultdict(list)
    for r in records:
        groups[(r.condition, r.shot, float(r.window_s))].append(r)
    scores = {}
    for (cond, shot, w), recs in groups.items():
        m = np.zeros((len(labels), len(labels) + 1), dtype=int)
        for r in recs:
            j = col.get(r.predicted_label, len(labels)) if r.valid else len(labels)
            m[col[r.true_label], j] += 1
        s = ConditionScore(
            cond, shot, w, len(recs), sum(r.correct for r in recs),
            sum(not r.valid for r in recs), m,
            _mean(r.prompt_tokens_est for r in recs),
            _mean(r.prompt_tokens_reported for r in recs),
            _mean(r.completion_tokens_reported for r in recs),
        )
        scores[s.key] = s
    return Report(labels, scores)
