import numpy as np
import pytest

from gazeprompt.core import CoordinateSpace, GazeTrace, WindowInstance


def make_trace(x, y, rate_hz=30.0, valid=None, space=None, activity="unknown", participant="p0"):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    t = np.arange(len(x)) / rate_hz
    if valid is None:
        valid = np.isfinite(x) & np.isfinite(y)
    return GazeTrace(t, x, y, valid, rate_hz=rate_hz, space=space or CoordinateSpace.pixels(),
                     participant=participant, activity=activity)


def two_dwells(rate_hz=30.0, space=None, a=(0.0, 0.0), b=(10.0, 0.0), dwell_s=0.5):
    n = int(round(dwell_s * rate_hz))
    xs = [a[0]] * n + [b[0]] * n
    ys = [a[1]] * n + [b[1]] * n
    return make_trace(xs, ys, rate_hz, space=space or CoordinateSpace.dva())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def walk_trace():
    r = np.random.default_rng(99)
    steps = r.normal(0, 15, size=(500, 2))
    pts = np.clip(np.cumsum(steps, axis=0) + [960, 540], 0, [1920, 1080])
    return make_trace(pts[:, 0], pts[:, 1])


@pytest.fixture
def window10():
    from gazeprompt.synth import SynthActivity, SynthKind, synth_generate
    tr = synth_generate(SynthActivity(SynthKind.RANDOM_SACCADE, duration_s=10, seed=5))
    return WindowInstance(tr, 10.0, tr.trace_id, 0.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(mod.RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
