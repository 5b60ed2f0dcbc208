"""Acceptance criteria, one test each. Every test reports a PASS/FAIL line."""
import json
import os
import re
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from gazeprompt.client import (
    FixedLabelBackend, ModelConfig, OracleTruthBackend, UniformRandomBackend, make_backend, serialize_request,
)
from gazeprompt.core import CoordinateSpace, WindowInstance, segment_windows
from gazeprompt.encode import (
    DEFAULT_TOKEN_MODEL, TextKind, TextPrompt, encode_feature_text, encode_raw_text, estimate_tokens, linear_fit_r2,
)
from gazeprompt.evaluation import (
    Condition, ExperimentPlan, Preparer, _prepare, resolve_catalog, run, sample_trials, score,
    split_participants,
)
from gazeprompt.events import IdtParams, idt_detect, idt_oracle
from gazeprompt.prompt import ActivityCatalog, PromptContext, build_user_prompt, parse_response
from gazeprompt.render import HeatmapMode, VizKind, heatmap_weights, render
from gazeprompt.synth import SynthActivity, SynthKind, synth_generate, synthetic_dataset

GOLDEN = Path(__file__).parent / "golden"
RESULTS = []  # (number, title, status, detail); printed in the terminal summary


@contextmanager
def criterion(number, title):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except pytest.skip.Exception as exc:
        RESULTS.append((number, title, "SKIP", str(exc)))
        raise
    except BaseException as exc:
        RESULTS.append((number, title, "FAIL", f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"))
        raise
    detail = info.get("detail", "")
    RESULTS.append((number, title, "PASS", f"{detail} ({time.perf_counter() - t0:.1f} s)".strip()))
    print(f"criterion {number}: PASS {detail}")


def same_events(a, b):
    (fa, sa), (fb, sb) = a, b
    if [(f.start_index, f.end_index, f.start_t, f.end_t) for f in fa] != \
       [(f.start_index, f.end_index, f.start_t, f.end_t) for f in fb]:
        return False
    if any(abs(f.x - g.x) > 1e-9 or abs(f.y - g.y) > 1e-9 for f, g in zip(fa, fb)):
        return False
    return [(s.start_t, s.end_t) for s in sa] == [(s.start_t, s.end_t) for s in sb]


def test_1_idt_oracle_equivalence():
    with criterion(1, "I-DT matches the reference oracle; 200 ms minimum dwell") as info:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        n_traces = n_fix = 0
        for i in range(1200):
            rate = float(rng.uniform(30, 1000))
            n = int(rng.integers(10, 501))
            kind = list(SynthKind)[i % len(SynthKind)]
            space = CoordinateSpace.pixels() if i % 2 else CoordinateSpace.dva()
            span = space.x_range[1] - space.x_range[0]
            tr = synth_generate(SynthActivity(
                kind, rate_hz=rate, duration_s=n / rate, seed=i, space=space, dwell_s=float(rng.uniform(0.1, 0.6)),
                blink_rate_hz=float(rng.choice([0.0, 2.0])),
            ))
            assert len(tr) <= 500
            params = IdtParams(float(rng.uniform(0.005, 0.1)) * span)
            got = idt_detect(tr, params)
            assert same_events(got, idt_oracle(tr, params)), f"trace {i} differs"
            for f in got[0]:
                assert f.end_t - f.start_t >= 0.2 - 1e-9
            n_traces += 1
            n_fix += len(got[0])
        elapsed = time.perf_counter() - t0
        assert elapsed < 60
        info["detail"] = f"{n_traces} traces, {n_fix} fixations identical"


def test_2_constant_image_tokens():
    with criterion(2, "1024x512 rasters at 350 tokens; raw-text tokens linear in window") as info:
        t0 = time.perf_counter()
        tr = synth_generate(SynthActivity(SynthKind.RANDOM_SACCADE, duration_s=100, seed=7))
        sizes = np.arange(10, 101, 10, dtype=float)
        raw = []
        for w in sizes:
            win = segment_windows(tr, w)[0]
            events = idt_detect(win, IdtParams(80))
            for kind in VizKind:
                img = render(kind, win, events)
                assert (img.width, img.height) == (1024, 512)
                assert estimate_tokens(img) == 350
            raw.append(estimate_tokens(encode_raw_text(win)))
        r2 = linear_fit_r2(sizes, raw)
        assert r2 >= 0.99
        assert all(b > a for a, b in zip(raw, raw[1:]))
        assert time.perf_counter() - t0 < 30
        info["detail"] = f"raw-text {raw[0]}..{raw[-1]} tokens, R^2={r2:.5f}"


def test_3_token_ordering():
    with criterion(3, "raw-text > feature-text > 350 tokens at 30 Hz, 10 s") as info:
        raw, feat = [], []
        for kind in (SynthKind.RANDOM_SACCADE, SynthKind.READING_SWEEP, SynthKind.HORIZONTAL_SACCADE):
            for seed in range(20):
                tr = synth_generate(SynthActivity(kind, duration_s=10, seed=seed, dwell_s=0.3))
                events = idt_detect(tr, IdtParams(0.042 * 1920))
                raw.append(estimate_tokens(encode_raw_text(tr)))
                feat.append(estimate_tokens(encode_feature_text(tr, events)))
        raw, feat = np.array(raw), np.array(feat)
        assert np.all(raw > feat) and np.all(feat > 350)
        ratio = raw.mean() / 350
        assert 2 <= ratio <= 6
        info["detail"] = f"mean raw {raw.mean():.0f}, feature {feat.mean():.0f}, visual 350, ratio {ratio:.2f}"


def test_4_determinism():
    with criterion(4, "byte-identical PNGs, golden feature text, identical bundles") as info:
        def build():
            tr = synth_generate(SynthActivity(SynthKind.READING_SWEEP, duration_s=10, seed=3))
            win = WindowInstance(tr, 10.0, tr.trace_id, 0.0)
            events = idt_detect(win, IdtParams(80))
            pngs = [render(k, win, events).png for k in VizKind]
            cat = ActivityCatalog.builtin("DesktopActivity")
            examples = {lb: render(VizKind.HEATMAP_RAW, win) for lb in cat.labels}
            bundle = build_user_prompt(render(VizKind.SCANPATH_FEAT, win, events), cat,
                                       PromptContext(30, 10), examples, seed=17)
            return pngs, bundle.to_json(), json.dumps(serialize_request(bundle, ModelConfig()))

        a, b = build(), build()
        assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]

        r = np.random.default_rng(99)
        pts = np.clip(np.cumsum(r.normal(0, 15, size=(500, 2)), axis=0) + [960, 540], 0, [1920, 1080])
        from conftest import make_trace
        walk = make_trace(pts[:, 0], pts[:, 1])
        body = encode_feature_text(walk, idt_detect(walk, IdtParams(80))).body
        assert body + "\n" == (GOLDEN / "feature_text_walk500.txt").read_text()
        num = r"-?\d+(?:\.\d+)?"
        grammar = re.compile(
            rf"F\(\({num}, {num}\), {num}\)|S\(\({num}, {num}\) -> \({num}, {num}\), {num}\)")
        assert all(grammar.fullmatch(line) for line in body.splitlines())
        info["detail"] = f"{len(a[0])} PNGs, {len(body.splitlines())} golden lines"


@pytest.mark.parametrize("n_part,k,pool,expected", [(14, 6, 2, 180), (24, 8, 3, 240), (8, 6, 1, 180)])
def test_5_protocol_shape(n_part, k, pool, expected):
    with criterion(5, f"protocol shape, {n_part} participants / {k} classes") as info:
        labels = [f"C{i}" for i in range(k)]
        spec, traces = synthetic_dataset(labels, n_part, duration_s=20, seed=n_part)
        plan = ExperimentPlan(spec, (Condition("heatmap-abs", "one"), Condition("raw-text", "zero")),
                              trials_per_class=30, example_pool_size=pool)
        ex, test = split_participants(spec, pool, plan.master_seed)
        assert len(ex) == pool and len(test) == n_part - pool and not set(ex) & set(test)
        trials = sample_trials(plan, traces, test, ex)
        for cond in plan.conditions:
            assert sum(t.condition == cond for t in trials) == expected
        catalog = resolve_catalog(plan)
        prep = Preparer(spec)
        one_shot = [t for t in trials if t.condition.shot.value == "one"]
        assert all(t.example_participant in ex and t.target.participant in test for t in one_shot)
        for trial in one_shot[:3]:
            _, bundle = _prepare(trial, plan, catalog, prep, DEFAULT_TOKEN_MODEL)
            assert len(bundle.images) == k + 1
        info["detail"] = f"{expected} trials per condition, split {pool}/{n_part - pool}, {k + 1} images"


@pytest.fixture(scope="module")
def six_class_data():
    return synthetic_dataset(["Browse", "Play", "Read", "Search", "Watch", "Write"], 8, duration_s=30, seed=11)


def test_6_mock_statistics(tmp_path, six_class_data):
    with criterion(6, "oracle 1.0, uniform random near 1/6, fixed label one column") as info:
        t0 = time.perf_counter()
        spec, traces = six_class_data
        conds = tuple(Condition(r, s) for r in ("timeline-raw", "heatmap-count", "scanpath-feat", "feature-text")
                      for s in ("zero", "one"))
        plan = ExperimentPlan(spec, conds, trials_per_class=30, example_pool_size=1)
        oracle = score(run(plan, OracleTruthBackend(), tmp_path / "oracle", traces=traces))
        assert all(s.accuracy == 1.0 and s.n == 180 for s in oracle.scores.values())

        plan = ExperimentPlan(spec, (Condition("raw-text", "zero"),), trials_per_class=300)
        recs = run(plan, UniformRandomBackend(seed=0), tmp_path / "random", traces=traces, save_images=False)
        assert len(recs) == 1800
        acc = score(recs).accuracy("raw-text")
        assert abs(acc - 1 / 6) < 0.03

        plan = ExperimentPlan(spec, (Condition("raw-text", "zero"),), trials_per_class=30)
        fixed = score(run(plan, FixedLabelBackend("Read"), tmp_path / "fixed", traces=traces, save_images=False),
                      spec.class_labels)
        m = fixed.confusion("raw-text")
        assert np.count_nonzero(m.sum(axis=0)) == 1 and m[:, spec.class_labels.index("Read")].sum() == 180
        assert list(m.sum(axis=1)) == [30] * 6
        elapsed = time.perf_counter() - t0
        assert elapsed < 120
        info["detail"] = f"oracle 1.000 over {len(oracle.scores)} conditions, random {acc:.4f} over 1800"


def test_7_ordering_fairness():
    with criterion(7, "first-position frequency passes chi-square at p > 0.01") as info:
        pvals = []
        for cat in (ActivityCatalog.builtin("DesktopActivity"), ActivityCatalog.builtin("SedentaryActivity")):
            target = TextPrompt("0, 0", TextKind.RAW_TEXT, 1)
            examples = {lb: TextPrompt(lb, TextKind.RAW_TEXT, 1) for lb in cat.labels}
            first_desc = {lb: 0 for lb in cat.labels}
            first_ex = {lb: 0 for lb in cat.labels}
            for seed in range(1000):
                b = build_user_prompt(target, cat, PromptContext(30, 10), examples, seed=seed)
                first_desc[b.description_labels[0]] += 1
                first_ex[b.example_labels[0]] += 1
            for counts in (first_desc, first_ex):
                pvals.append(chisquare(list(counts.values())).pvalue)
        assert min(pvals) > 0.01
        info["detail"] = "p-values " + ", ".join(f"{p:.3f}" for p in pvals)


def test_8_heatmap_mass():
    with criterion(8, "heatmap cell weights conserve dwell time and fixation count") as info:
        rng = np.random.default_rng(8)
        worst = 0.0
        for i in range(100):
            rate = float(rng.choice([30, 60, 250, 1000]))
            tr = synth_generate(SynthActivity(
                list(SynthKind)[i % len(SynthKind)], rate_hz=rate, duration_s=float(rng.uniform(2, 10)), seed=i,
                blink_rate_hz=0.5, space=CoordinateSpace.pixels() if i % 3 else CoordinateSpace.normalized(),
            ))
            win = WindowInstance(tr, tr.t[-1] + 1 / rate, tr.trace_id, 0.0)
            w = heatmap_weights(win, HeatmapMode.ABSOLUTE_DURATION)
            err = abs(w.sum() - tr.n_valid / rate)
            fix, sac = idt_detect(win, IdtParams(0.03 * (tr.space.x_range[1] - tr.space.x_range[0])))
            if fix:
                err = max(err, abs(heatmap_weights(win, HeatmapMode.FIXATION_COUNT, (fix, sac)).sum() - len(fix)))
            worst = max(worst, err)
        assert worst <= 1e-9
        info["detail"] = f"max error {worst:.2e}"


LIVE = os.environ.get("GAZEPROMPT_LIVE") == "1" and os.environ.get("OPENAI_API_KEY")


@pytest.mark.skipif(not LIVE, reason="set GAZEPROMPT_LIVE=1 and OPENAI_API_KEY for the live smoke test")
def test_9_live_smoke(tmp_path):
    with criterion(9, "live endpoint: one zero-shot trial per representation"):
        tr = synth_generate(SynthActivity(SynthKind.READING_SWEEP, duration_s=10, seed=1))
        win = WindowInstance(tr, 10.0, tr.trace_id, 0.0)
        events = idt_detect(win, IdtParams(80))
        cat = ActivityCatalog.builtin("DesktopActivity")
        backend = make_backend("openai", ModelConfig(), log_dir=tmp_path)
        from gazeprompt.client import TrialMeta
        for kind in list(VizKind) + list(TextKind):
            if kind is TextKind.RAW_TEXT:
                content = encode_raw_text(win)
            elif kind is TextKind.FEATURE_TEXT:
                content = encode_feature_text(win, events)
            else:
                content = render(kind, win, events)
            bundle = build_user_prompt(content, cat, PromptContext(30, 10), seed=0)
            reply = backend.complete(bundle, TrialMeta(f"live/{kind.value}"))
            parse_response(reply.text, cat)
            assert reply.prompt_tokens is not None
        assert list(tmp_path.iterdir())


def test_9_reports_skip_when_offline():
    if not LIVE:
        RESULTS.append((9, "live endpoint smoke", "SKIP", "no live credentials"))
