import numpy as np
import pytest

from gazeprompt.core import CoordinateSpace, ingest
from gazeprompt.synth import SynthActivity, SynthKind, synth_generate, synthetic_dataset, write_csv


def test_stationary_without_noise_is_constant():
    tr = synth_generate(SynthActivity(SynthKind.STATIONARY_FIXATION, noise_sigma=0.0))
    assert np.all(tr.x == tr.x[0]) and np.all(tr.y == tr.y[0])
    assert len(tr) == 300 and tr.valid.all()


@pytest.mark.parametrize("kind", list(SynthKind))
def test_same_seed_same_trace(kind):
    a = synth_generate(SynthActivity(kind, seed=3))
    b = synth_generate(SynthActivity(kind, seed=3))
    c = synth_generate(SynthActivity(kind, seed=4))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)
    lo, hi = a.space.x_range
    assert np.nanmin(a.x) >= lo and np.nanmax(a.x) <= hi


def test_blinks_invalidate_samples():
    tr = synth_generate(SynthActivity(SynthKind.RANDOM_WALK, duration_s=60, blink_rate_hz=0.5, seed=1))
    assert 0 < (~tr.valid).sum() < len(tr)
    assert np.isnan(tr.x[~tr.valid]).all()


def test_rate_and_space():
    tr = synth_generate(SynthActivity(SynthKind.SMOOTH_PURSUIT, rate_hz=1000, duration_s=2,
                                      space=CoordinateSpace.normalized()))
    assert len(tr) == 2000 and np.allclose(np.diff(tr.t), 1e-3)
    assert tr.x.max() <= 1.0


def test_dataset_roundtrip_through_csv(tmp_path):
    spec, traces = synthetic_dataset(["A", "B", "C", "D", "E", "F", "G"], 2, duration_s=5)
    assert len(traces) == 14
    assert {t.activity for t in traces} == set("ABCDEFG")
    path = tmp_path / "d.csv"
    write_csv(traces, path)
    back = ingest(path, spec)
    assert len(back) == 14
    assert np.allclose(back[0].x, traces[0].x)
