import csv
import json

import numpy as np
import pytest

from gazeprompt.client import FixedLabelBackend, OracleTruthBackend, ScriptedBackend, UniformRandomBackend
from gazeprompt.errors import ConfigError, InsufficientData, PoolTooLarge, TransportError
from gazeprompt.evaluation import (
    INVALID, Condition, ExperimentPlan, TrialRecord, all_conditions, derive_seed, read_records, run,
    sample_trials, score, split_participants,
)
from gazeprompt.prompt import Shot
from gazeprompt.synth import synthetic_dataset

LABELS6 = ("Browse", "Play", "Read", "Search", "Watch", "Write")


@pytest.fixture(scope="module")
def data6():
    return synthetic_dataset(LABELS6, 8, duration_s=30, seed=1)


def plan_for(spec, conditions, **kw):
    kw.setdefault("example_pool_size", 1 if any(Shot(s) is Shot.ONE for _, s in conditions) else 0)
    return ExperimentPlan(spec, tuple(Condition(r, s) for r, s in conditions), **kw)


# --- splits -------------------------------------------------------------------

@pytest.mark.parametrize("n,pool", [(14, 2), (24, 3), (8, 1)])
def test_split_sizes(n, pool):
    parts = [f"{i:02d}" for i in range(n)]
    ex, test = split_participants(parts, pool, seed=5)
    assert len(ex) == pool and len(test) == n - pool
    assert not set(ex) & set(test) and set(ex) | set(test) == set(parts)
    assert split_participants(parts, pool, seed=5) == (ex, test)


def test_split_edge_cases():
    parts = ["a", "b", "c"]
    assert split_participants(parts, 0, 1) == ((), ("a", "b", "c"))
    with pytest.raises(PoolTooLarge):
        split_participants(parts, 3, 1)


def test_derive_seed_stable():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(2, "a", 2)
    assert 0 <= derive_seed(0, "x") < 2**63


# --- plans --------------------------------------------------------------------

def test_plan_validation(data6):
    spec, _ = data6
    with pytest.raises(ConfigError):
        ExperimentPlan(spec, (Condition("raw-text", "zero"),), trials_per_class=0)
    with pytest.raises(ConfigError):
        ExperimentPlan(spec, (Condition("raw-text", "one"),), example_pool_size=0)
    with pytest.raises(ConfigError):
        Condition("pie-chart", "zero")


def test_plan_file_roundtrip(tmp_path, data6):
    spec, _ = data6
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_dict()))
    (tmp_path / "plan.toml").write_text(
        'dataset = "spec.json"\nwindow_sizes = [10, 20]\ntrials_per_class = 4\nexample_pool_size = 2\n'
        'master_seed = 9\n[[conditions]]\nrepresentation = "heatmap-count"\nshot = "one"\n'
        '[data]\npaths = ["*.csv"]\n'
    )
    plan = ExperimentPlan.load(tmp_path / "plan.toml")
    assert plan.dataset == spec and plan.window_sizes == (10.0, 20.0)
    assert plan.conditions == (Condition("heatmap-count", Shot.ONE),)
    assert plan.data["paths"] == [str(tmp_path / "*.csv")]
    again = ExperimentPlan.from_dict(plan.to_dict())
    assert again.to_dict() == plan.to_dict()
    assert len(all_conditions()) == 16


# --- sampling -----------------------------------------------------------------

def test_trial_counts(data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "zero"), ("heatmap-abs", "one")], trials_per_class=30)
    pool, test = split_participants(spec, 1, 0)
    trials = sample_trials(plan, traces, test, pool)
    for cond in plan.conditions:
        mine = [t for t in trials if t.condition == cond]
        assert len(mine) == 180
        assert all(t.target.participant in test for t in mine)
        per_class = {lb: sum(t.true_label == lb for t in mine) for lb in LABELS6}
        assert set(per_class.values()) == {30}
    # same targets under both conditions
    a = [t.target.origin for t in trials if t.condition.representation == "raw-text"]
    b = [t.target.origin for t in trials if t.condition.representation == "heatmap-abs"]
    assert a == b
    one = [t for t in trials if t.condition.shot is Shot.ONE]
    assert len({t.example_participant for t in one}) == 1
    assert one[0].example_participant in pool
    assert all(set(t.examples) == set(LABELS6) for t in one)
    assert all(w.participant not in test for t in one for w in t.examples.values())


def test_eight_classes():
    labels = ("Read", "Watch", "Browse", "Search", "Play", "Interpret", "Debug", "Write")
    spec, traces = synthetic_dataset(labels, 4, duration_s=20)
    plan = plan_for(spec, [("feature-text", "zero")])
    assert len(sample_trials(plan, traces, spec.participants)) == 240


def test_per_trial_examples(data6):
    spec, traces = data6
    plan = plan_for(spec, [("scanpath-raw", "one")], trials_per_class=5, example_pool_size=3,
                    per_trial_examples=True)
    pool, test = split_participants(spec, 3, 0)
    trials = sample_trials(plan, traces, test, pool)
    assert len({t.example_participant for t in trials}) > 1


def test_sampling_reproducible(data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "zero")], trials_per_class=7, master_seed=3)
    a = sample_trials(plan, traces, spec.participants)
    b = sample_trials(plan, traces, spec.participants)
    assert [(t.trial_id, t.target.origin, t.seed) for t in a] == [(t.trial_id, t.target.origin, t.seed) for t in b]


def test_missing_class(data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "zero")])
    with pytest.raises(InsufficientData) as exc:
        sample_trials(plan, [t for t in traces if t.activity != "Watch"], spec.participants)
    assert exc.value.label == "Watch"


def test_overlapping_pool_rejected(data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "one")])
    with pytest.raises(ConfigError):
        sample_trials(plan, traces, spec.participants, spec.participants[:1])


# --- run ----------------------------------------------------------------------

def test_oracle_run(tmp_path, data6):
    spec, traces = data6
    plan = plan_for(spec, [("timeline-feat", "one"), ("feature-text", "zero")], trials_per_class=2)
    recs = run(plan, OracleTruthBackend(), tmp_path, traces=traces)
    assert len(recs) == 24 and all(r.correct for r in recs)
    assert (tmp_path / "plan.json").exists()
    assert len(read_records(tmp_path / "records.jsonl")) == 24
    assert list((tmp_path / "images").glob("*.png"))
    one = [r for r in recs if r.shot == "one"]
    assert all(r.example_participant for r in one)


def test_resume_matches_uninterrupted(tmp_path, data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "zero"), ("heatmap-count", "one")], trials_per_class=3, master_seed=8)
    backend = UniformRandomBackend(seed=2)
    full = run(plan, backend, tmp_path / "full", traces=traces, save_images=False)
    part_dir = tmp_path / "part"
    first = run(plan, backend, part_dir, traces=traces, limit=10, save_images=False)
    assert len(first) == 10
    # simulate a kill mid-write
    with open(part_dir / "records.jsonl", "a") as fh:
        fh.write('{"trial_id": "raw-text/zero/w10/Br')
    resumed = run(plan, backend, part_dir, traces=traces, save_images=False)

    def key(recs):
        return {(r.trial_id, r.predicted_label, r.prompt_tokens_est) for r in recs}

    assert key(resumed) == key(full)
    assert len(read_records(part_dir / "records.jsonl")) == len(full) == 36


def test_run_refuses_changed_plan(tmp_path, data6):
    spec, traces = data6
    run(plan_for(spec, [("raw-text", "zero")], trials_per_class=1), OracleTruthBackend(), tmp_path, traces=traces)
    with pytest.raises(ConfigError):
        run(plan_for(spec, [("raw-text", "zero")], trials_per_class=2), OracleTruthBackend(), tmp_path, traces=traces)


def test_concurrency_cap(tmp_path, data6):
    spec, traces = data6
    backend = OracleTruthBackend(max_concurrent=3, delay_s=0.01)
    recs = run(plan_for(spec, [("raw-text", "zero")], trials_per_class=5), backend, tmp_path, traces=traces)
    assert len(recs) == 30 and all(r.correct for r in recs)
    assert 1 < backend.meter.peak <= 3
    ids = [json.loads(ln)["trial_id"] for ln in (tmp_path / "records.jsonl").read_text().splitlines()]
    assert len(ids) == len(set(ids)) == 30


def test_per_trial_errors_are_recorded(tmp_path, data6):
    spec, traces = data6
    recs = run(plan_for(spec, [("raw-text", "zero")], trials_per_class=1), ScriptedBackend({}), tmp_path,
               traces=traces)
    assert all(not r.valid and r.error.startswith("ScriptMiss") and r.predicted_label == INVALID for r in recs)


def test_synthetic_data_block(tmp_path):
    spec, _ = synthetic_dataset(LABELS6, 3, duration_s=20)
    plan = ExperimentPlan(spec, (Condition("raw-text", "zero"),), trials_per_class=1,
                          data={"synthetic": {"duration_s": 20}})
    assert len(run(plan, OracleTruthBackend(), tmp_path)) == 6


# --- scoring ------------------------------------------------------------------

def rec(true, pred, valid=True, cond="raw-text", tokens=None):
    return TrialRecord(f"{cond}/{true}/{pred}/{np.random.rand()}", "d", cond, "zero", 10.0, 0, "p", true,
                       pred if valid else INVALID, valid, prompt_tokens_est=tokens)


def test_hand_computed_confusion():
    pairs = [("A", "A"), ("A", "A"), ("A", "B"), ("A", None),
             ("B", "B"), ("B", "B"), ("B", "B"), ("B", "C"),
             ("C", "A"), ("C", "C"), ("C", None), ("C", None)]
    recs = [rec(t, p or INVALID, valid=p is not None) for t, p in pairs]
    report = score(recs, ["A", "B", "C"])
    expected = np.array([[2, 1, 0, 1],
                         [0, 3, 1, 0],
                         [1, 0, 1, 2]])
    assert np.array_equal(report.confusion("raw-text"), expected)
    assert report.accuracy("raw-text") == pytest.approx(6 / 12)
    s = report.scores["raw-text_zero_w10"]
    assert s.invalid == 3 and s.n == 12


def test_all_correct_and_fixed():
    labels = list(LABELS6)
    recs = [rec(lb, lb) for lb in labels for _ in range(30)]
    m = score(recs, labels).confusion("raw-text")
    assert np.array_equal(m[:, :6], np.eye(6) * 30) and m[:, 6].sum() == 0
    recs = [rec(lb, "Read") for lb in labels for _ in range(30)]
    r = score(recs, labels)
    m = r.confusion("raw-text")
    assert np.count_nonzero(m.sum(axis=0)) == 1 and list(m.sum(axis=1)) == [30] * 6
    assert r.accuracy("raw-text") == pytest.approx(1 / 6)


def test_score_is_order_independent():
    recs = [rec(t, p) for t in "AB" for p in "AB" for _ in range(3)]
    a = score(recs, ["A", "B"])
    b = score(list(reversed(recs)), ["A", "B"])
    assert np.array_equal(a.confusion("raw-text"), b.confusion("raw-text"))


def test_multiplier_table(tmp_path):
    recs = [rec("A", "A", cond="raw-text", tokens=1200), rec("A", "A", cond="heatmap-abs", tokens=400),
            rec("A", "A", cond="timeline-raw", tokens=400), rec("A", "A", cond="feature-text", tokens=600)]
    r = score(recs, ["A"])
    mult = r.multipliers()
    assert mult[("raw-text", "zero", 10.0)] == pytest.approx(3.0)
    assert mult[("feature-text", "zero", 10.0)] == pytest.approx(1.5)
    r.write(tmp_path, plots=True)
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert {row["condition"] for row in rows} == {"raw-text", "heatmap-abs", "timeline-raw", "feature-text"}
    assert (tmp_path / "confusion_raw-text_zero_w10.csv").exists()
    assert (tmp_path / "confusion_raw-text_zero_w10.png").exists()
    assert (tmp_path / "multipliers.csv").exists()


def test_score_needs_records():
    with pytest.raises(ValueError):
        score([])


class FlakyBackend(OracleTruthBackend):
    def __init__(self, fail):
        super().__init__()
        self.fail = fail

    def complete(self, bundle, meta):
        if self.fail:
            raise TransportError("connection refused")
        return super().complete(bundle, meta)


def test_transport_failures_are_retried_on_resume(tmp_path, data6):
    spec, traces = data6
    plan = plan_for(spec, [("raw-text", "zero")], trials_per_class=1)
    first = run(plan, FlakyBackend(True), tmp_path, traces=traces)
    assert all(r.retryable and not r.valid for r in first)
    second = run(plan, FlakyBackend(False), tmp_path, traces=traces)
    assert len(second) == 6 and all(r.correct and not r.retryable for r in second)
    assert [r.correct for r in read_records(tmp_path / "records.jsonl")] == [True] * 6
