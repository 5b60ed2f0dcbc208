"""Command-line entry point (``gazeprompt``).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 transport error. Failures print one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import __version__
from .client import ModelConfig, make_backend
from .core import BUILTIN_SPECS, DatasetSpec, WindowInstance, WindowPolicy, ingest, load_config_file, segment_windows
from .encode import DEFAULT_TOKEN_MODEL, TextKind, TextPrompt, TokenModel, encode_feature_text, encode_raw_text, estimate_tokens
from .errors import ConfigError, DataError, GazePromptError, TransportError
from .evaluation import ExperimentPlan, read_records, run, score
from .events import IdtParams, idt_detect, merge_events
from .prompt import ActivityCatalog, PromptContext, build_user_prompt
from .render import DEFAULT_STYLE, RenderedImage, Style, VizKind, render
from .synth import SynthActivity, SynthKind, synth_generate, synthetic_dataset, write_csv

log = logging.getLogger("gazeprompt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared helpers

def _dataset(value: str | None) -> DatasetSpec:
    if value is None:
        raise UsageError("--dataset is required (built-in name or config file)")
    if value in BUILTIN_SPECS:
        return BUILTIN_SPECS[value]()
    path = Path(value)
    if not path.exists():
        raise UsageError(f"--dataset: {value!r} is neither a built-in dataset ({', '.join(BUILTIN_SPECS)}) nor a file")
    return DatasetSpec.from_dict(load_config_file(path))


def _style(path: str | None) -> Style:
    return Style.from_dict(load_config_file(path)) if path else DEFAULT_STYLE


def _token_model(path: str | None) -> TokenModel:
    return TokenModel.from_dict(load_config_file(path)) if path else DEFAULT_TOKEN_MODEL


def _select_window(args, spec: DatasetSpec) -> WindowInstance:
    traces = ingest(args.input, spec, participant=args.participant, activity=args.activity)
    if not 0 <= args.trace < len(traces):
        raise UsageError(f"--trace {args.trace} out of range (file holds {len(traces)} trace(s))")
    trace = traces[args.trace]
    if args.window_s is None:
        return WindowInstance.whole(trace)
    if args.seed is not None:
        windows = segment_windows(trace, args.window_s, WindowPolicy.RANDOM_OFFSET, seed=args.seed)
    else:
        windows = segment_windows(trace, args.window_s)
    if not 0 <= args.window_index < len(windows):
        raise UsageError(f"--window-index {args.window_index} out of range ({len(windows)} window(s))")
    return windows[args.window_index]


def _events(window, spec: DatasetSpec, threshold: float | None):
    return idt_detect(window, IdtParams(threshold or spec.dispersion_threshold))


def _write_text(text: str, out: str | None):
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _add_input(p: argparse.ArgumentParser, windowed: bool = True):
    p.add_argument("input", help="recording file")
    p.add_argument("--dataset", required=True, help="built-in dataset name or dataset config file")
    p.add_argument("--participant", help="override participant id")
    p.add_argument("--activity", help="override activity label")
    p.add_argument("--trace", type=int, default=0, help="index of the trace within the file")
    if windowed:
        p.add_argument("--window-s", type=float, help="window length in seconds (default: whole trace)")
        p.add_argument("--window-index", type=int, default=0)
        p.add_argument("--seed", type=int, help="draw a random-offset window with this seed")
    p.add_argument("--threshold", type=float, help="override the dispersion threshold")


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    spec = _dataset(args.dataset)
    traces = []
    for path in args.inputs:
        traces.extend(ingest(path, spec, participant=args.participant, activity=args.activity))
    for tr in traces:
        print(json.dumps({
            "trace_id": tr.trace_id, "participant": tr.participant, "activity": tr.activity,
            "samples": len(tr), "valid": tr.n_valid, "duration_s": round(tr.duration, 6),
        }))
    if args.csv:
        write_csv(traces, args.csv)
    return EXIT_OK


def cmd_detect(args) -> int:
    spec = _dataset(args.dataset)
    window = _select_window(args, spec)
    fixations, saccades = _events(window, spec, args.threshold)
    lines = [json.dumps(e.to_json()) for e in merge_events(fixations, saccades)]
    if lines:
        _write_text("\n".join(lines), args.out)
    elif args.out:
        Path(args.out).write_text("", encoding="utf-8")
    return EXIT_OK


def cmd_render(args) -> int:
    spec = _dataset(args.dataset)
    window = _select_window(args, spec)
    kind = VizKind(args.viz)
    events = _events(window, spec, args.threshold) if kind.needs_events else None
    image = render(kind, window, events, style=_style(args.style), lenient=args.lenient)
    image.save(args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    spec = _dataset(args.dataset)
    window = _select_window(args, spec)
    if args.kind == TextKind.RAW_TEXT.value:
        ds = spec.downsample_raw_text if args.downsample is None else args.downsample
        prompt = encode_raw_text(window, args.decimals, ds)
    else:
        prompt = encode_feature_text(window, _events(window, spec, args.threshold), args.decimals)
    _write_text(prompt.body, args.out)
    return EXIT_OK


def cmd_tokens(args) -> int:
    model = _token_model(args.token_model)
    for path in args.files:
        path = Path(path)
        if path.suffix.lower() == ".png":
            with Image.open(path) as im:
                kind, tokens = "image", model.image_tokens(*im.size)
        else:
            kind, tokens = "text", estimate_tokens(path.read_text(encoding="utf-8").rstrip("\n"), model)
        print(json.dumps({"kind": kind, "tokens": tokens}))
    return EXIT_OK


def _load_content(path: str, representation: str):
    if representation in {k.value for k in VizKind}:
        with Image.open(path) as im:
            return RenderedImage(np.asarray(im.convert("RGB")), VizKind(representation), {"source": str(path)})
    body = Path(path).read_text(encoding="utf-8").rstrip("\n")
    return TextPrompt(body, TextKind(representation), len(body.splitlines()))


def _catalog(args) -> ActivityCatalog:
    if args.catalog and Path(args.catalog).exists():
        return ActivityCatalog.load(args.catalog)
    if args.catalog:
        return ActivityCatalog.builtin(args.catalog)
    spec = _dataset(args.dataset)
    try:
        catalog = ActivityCatalog.builtin(spec.name)
    except ConfigError:
        catalog = ActivityCatalog.generic(spec.class_labels, spec.name)
    return catalog


def cmd_prompt_build(args) -> int:
    catalog = _catalog(args)
    target = _load_content(args.target, args.repr)
    examples = None
    if args.example:
        examples = {}
        for item in args.example:
            label, sep, path = item.partition("=")
            if not sep:
                raise UsageError(f"--example expects LABEL=FILE, got {item!r}")
            examples[label] = _load_content(path, args.repr)
    context = PromptContext(args.rate_hz, args.window_s, unit=args.unit or "")
    bundle = build_user_prompt(target, catalog, context, examples, args.seed, _token_model(args.token_model))
    bundle.write(args.out, args.image_dir)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.labels:
        labels = [s.strip() for s in args.labels.split(",") if s.strip()]
        spec, traces = synthetic_dataset(
            labels, args.participants, rate_hz=args.rate_hz, duration_s=args.duration_s,
            seed=args.seed, name=args.name, blink_rate_hz=args.blink_rate_hz,
        )
        write_csv(traces, args.out)
        if args.spec_out:
            Path(args.spec_out).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    else:
        trace = synth_generate(SynthActivity(
            SynthKind(args.kind), rate_hz=args.rate_hz, duration_s=args.duration_s,
            noise_sigma=args.noise, seed=args.seed, blink_rate_hz=args.blink_rate_hz,
        ))
        write_csv([trace], args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan = replace(plan, master_seed=args.seed)
    model_config = ModelConfig.from_dict(load_config_file(args.model_config)) if args.model_config else ModelConfig()
    if not args.backend.startswith("mock:"):
        if not args.live:
            raise UsageError(f"backend {args.backend!r} makes paid API calls; pass --live to allow it")
        if not model_config.api_key():
            raise ConfigError(f"--live given but {model_config.api_key_env} is not set")
    out = Path(args.out)
    backend = make_backend(args.backend, model_config, log_dir=out / "requests", max_concurrent=args.jobs)
    records = run(plan, backend, out, token_model=_token_model(args.token_model),
                  limit=args.limit, save_images=not args.no_images)
    report = score(records, plan.dataset.class_labels)
    report.write(out, plots=args.plots)
    print(json.dumps({"records": len(records), "run_dir": str(out)}))
    failed = sum(r.retryable for r in records)
    if failed:
        raise TransportError(f"{failed} trial(s) failed in transport; rerun the same command to retry them")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    records = read_records(run_dir / "records.jsonl")
    if not records:
        raise DataError(f"{run_dir}: no records")
    labels = None
    if (run_dir / "plan.json").exists():
        labels = ExperimentPlan.from_dict(json.loads((run_dir / "plan.json").read_text())).dataset.class_labels
    report = score(records, labels)
    report.write(run_dir, plots=args.plots)
    for s in sorted(report.scores.values(), key=lambda s: (s.shot, s.window_s, s.condition)):
        print(json.dumps({
            "condition": s.condition, "shot": s.shot, "window_s": s.window_s, "n": s.n,
            "accuracy": round(s.accuracy, 6), "invalid": s.invalid,
            "prompt_tokens_est_mean": s.prompt_tokens_est_mean,
        }))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazeprompt", description="Visual and textual prompting for gaze-based activity recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="read recordings and list the traces found")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--dataset", required=True)
    p.add_argument("--participant")
    p.add_argument("--activity")
    p.add_argument("--csv", help="also write all traces as generic CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect", help="I-DT events as JSON lines")
    _add_input(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("render", help="render one window to PNG")
    _add_input(p)
    p.add_argument("--viz", required=True, choices=[k.value for k in VizKind])
    p.add_argument("--out", required=True)
    p.add_argument("--style", help="style config file (JSON or TOML)")
    p.add_argument("--lenient", action="store_true", help="render 'no events' instead of failing")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("encode", help="text encoding of one window")
    _add_input(p)
    p.add_argument("--kind", required=True, choices=[k.value for k in TextKind])
    p.add_argument("--decimals", type=int)
    p.add_argument("--downsample", type=int, help="raw text: keep every Nth sample")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("tokens", help="token estimates for PNG or text files")
    p.add_argument("files", nargs="+")
    p.add_argument("--token-model", help="token model config file")
    p.set_defaults(func=cmd_tokens)

    p = sub.add_parser("prompt", help="prompt bundles")
    psub = p.add_subparsers(dest="prompt_command", required=True, parser_class=_Parser)
    b = psub.add_parser("build", help="assemble a bundle JSON from prepared content files")
    b.add_argument("--repr", required=True, choices=[k.value for k in VizKind] + [k.value for k in TextKind])
    b.add_argument("--target", required=True, help="PNG (visual) or text file")
    b.add_argument("--example", action="append", metavar="LABEL=FILE", help="one-shot example (repeat per class)")
    b.add_argument("--catalog", help="built-in catalog name or catalog JSON")
    b.add_argument("--dataset", help="dataset used to pick a catalog when --catalog is absent")
    b.add_argument("--rate-hz", type=float, required=True)
    b.add_argument("--window-s", type=float, required=True)
    b.add_argument("--unit")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--token-model")
    b.add_argument("--out", required=True)
    b.add_argument("--image-dir")
    b.set_defaults(func=cmd_prompt_build)

    p = sub.add_parser("synth", help="write synthetic traces as CSV")
    p.add_argument("--kind", default=SynthKind.STATIONARY_FIXATION.value, choices=[k.value for k in SynthKind])
    p.add_argument("--labels", help="comma-separated class labels: write a whole synthetic dataset")
    p.add_argument("--participants", type=int, default=4)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--rate-hz", type=float, default=30.0)
    p.add_argument("--duration-s", type=float, default=30.0)
    p.add_argument("--noise", type=float)
    p.add_argument("--blink-rate-hz", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--spec-out", help="dataset mode: also write the dataset config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="execute an experiment plan (resumable)")
    p.add_argument("--plan", required=True)
    p.add_argument("--backend", default="mock:oracle",
                   help="mock:oracle | mock:random[:SEED] | mock:fixed:LABEL | mock:script:FILE | openai")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--jobs", type=int, help="maximum in-flight model calls")
    p.add_argument("--live", action="store_true", help="allow a paid live backend")
    p.add_argument("--seed", type=int, help="override the plan's master seed")
    p.add_argument("--limit", type=int, help="stop after this many new trials")
    p.add_argument("--model-config")
    p.add_argument("--token-model")
    p.add_argument("--no-images", action="store_true", help="do not cache rendered images")
    p.add_argument("--plots", action="store_true", help="also write confusion-matrix PNGs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="score a run directory")
    p.add_argument("run_dir")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        return _fail(EXIT_USAGE, exc)
    except TransportError as exc:
        return _fail(EXIT_TRANSPORT, exc)
    except (DataError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)
    except GazePromptError as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
