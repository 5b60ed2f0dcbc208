import json
from collections import Counter

import numpy as np
import pytest

from gazeprompt.core import BUILTIN_SPECS
from gazeprompt.encode import TextKind, TextPrompt
from gazeprompt.errors import ConfigError, ExampleLabelMismatch
from gazeprompt.prompt import (
    INVALID, ActivityCatalog, Modality, PromptContext, Segment, Shot, build_system_prompt,
    build_user_prompt, parse_response,
)
from gazeprompt.render import RenderedImage, VizKind

CAT = ActivityCatalog.builtin("DesktopActivity")
CTX = PromptContext(30, 10)


def img(v=0):
    return RenderedImage(np.full((512, 1024, 3), v, np.uint8), VizKind.HEATMAP_RAW)


_EXAMPLES = {label: img(i + 1) for i, label in enumerate(CAT.labels)}
_TARGET = img()


def examples():
    return dict(_EXAMPLES)


def test_system_prompt_modalities():
    vis = build_system_prompt(CAT, Modality.VISUAL)
    txt = build_system_prompt(CAT, Modality.TEXTUAL)
    assert "eye-tracking" in vis and "image" in vis
    assert "numerical" in txt
    a, b = vis.split(". "), txt.split(". ")
    diff = [(x, y) for x, y in zip(a, b) if x != y]
    assert len(a) == len(b) and len(diff) == 1


def test_zero_shot_structure():
    b = build_user_prompt(img(), CAT, CTX, seed=1)
    assert b.shot is Shot.ZERO
    assert b.segment_parts(Segment.EXAMPLES) == []
    assert len(b.images) == 1
    order = [p.segment for p in b.user_parts]
    assert order == sorted(order, key=list(Segment).index)
    assert b.user_parts[-1].content is b.images[0]


def test_one_shot_visual_has_k_plus_one_images():
    b = build_user_prompt(img(), CAT, CTX, examples(), seed=3)
    assert b.shot is Shot.ONE
    assert len(b.images) == len(CAT.labels) + 1 == 7
    assert all(p.detail == "high" for p in b.user_parts if p.type == "image")
    ex_text = [p.content for p in b.segment_parts(Segment.EXAMPLES) if p.type == "text"]
    assert ex_text[1:] == [f"Example ({lb}):" for lb in b.example_labels]


def test_example_label_mismatch():
    ex = examples()
    ex.pop("Read")
    with pytest.raises(ExampleLabelMismatch):
        build_user_prompt(img(), CAT, CTX, ex)


def test_permutations_over_seeds():
    base = None
    orders = set()
    for seed in range(100):
        b = build_user_prompt(_TARGET, CAT, CTX, examples(), seed=seed)
        assert sorted(b.description_labels) == sorted(CAT.labels)
        assert sorted(b.example_labels) == sorted(CAT.labels)
        key = Counter(p.content if p.type == "text" and not p.content.startswith(("Activity", "Example (")) else p.type
                      for p in b.user_parts)
        assert base is None or key == base
        base = key
        orders.add(b.description_labels)
        again = build_user_prompt(_TARGET, CAT, CTX, examples(), seed=seed)
        assert again.to_json() == b.to_json()
    assert len(orders) > 50


def test_description_and_example_orders_independent():
    same = sum(
        build_user_prompt(_TARGET, CAT, CTX, examples(), seed=s).description_labels
        == build_user_prompt(_TARGET, CAT, CTX, examples(), seed=s).example_labels
        for s in range(200)
    )
    assert same < 10


def test_text_bundle():
    t = TextPrompt("1.00, 2.00", TextKind.RAW_TEXT, 1)
    b = build_user_prompt(t, CAT, CTX, seed=0)
    assert b.images == [] and b.condition == "raw-text"
    assert b.user_parts[-1].content == "1.00, 2.00"
    assert "numerical" in b.system
    assert b.token_estimate > 0


def test_bundle_json_shape(tmp_path):
    b = build_user_prompt(img(), CAT, CTX, examples(), seed=5)
    path = b.write(tmp_path / "bundle.json")
    doc = json.loads(path.read_text())
    assert set(doc) == {"system", "parts", "seed"}
    for part in doc["parts"]:
        if part["type"] == "image":
            assert set(part) == {"type", "path", "detail"} and part["detail"] == "high"
            assert (tmp_path / "images").joinpath(part["path"].split("/")[-1]).exists()
        else:
            assert set(part) == {"type", "text"}


def test_context_segment_mentions_rate_and_window():
    ctx = build_user_prompt(img(), CAT, PromptContext(30, 20, unit="px"), seed=0).segment_parts(Segment.CONTEXT)[0]
    assert "30 Hz" in ctx.content and "20-second" in ctx.content


def test_parse_json_reply():
    cat = ActivityCatalog.generic(["Reading", "Browsing", "Watching"])
    r = parse_response('{"activity":"Reading","reason":"line sweeps"}', cat)
    assert r.predicted_label == "Reading" and r.reason == "line sweeps"


def test_parse_free_text():
    cat = ActivityCatalog.generic(["Reading", "Browsing", "Watching"])
    assert parse_response("It is READING.", cat).predicted_label == "Reading"
    assert parse_response("Either Reading or Browsing", cat).predicted_label == INVALID
    assert parse_response("no idea", cat).predicted_label == INVALID
    assert not parse_response("", cat).valid


def test_parse_json_in_code_fence():
    reply = 'Sure.\n```json\n{"activity": "browse", "reason": "scrolling"}\n```'
    assert parse_response(reply, CAT).predicted_label == "Browse"


def test_parse_unknown_json_label_is_invalid():
    assert parse_response('{"activity": "Sleep"}', CAT).predicted_label == INVALID


def test_nested_labels():
    cat = ActivityCatalog.generic(["Saccade", "Random Saccade"])
    assert parse_response("Looks like random saccade", cat).predicted_label == "Random Saccade"


@pytest.mark.parametrize("name", list(BUILTIN_SPECS))
def test_builtin_catalogs_match_specs(name):
    cat = ActivityCatalog.builtin(name)
    cat.check_against(BUILTIN_SPECS[name]().class_labels)
    assert all(cat.description(lb) for lb in cat.labels)


def test_catalog_errors():
    with pytest.raises(ConfigError):
        ActivityCatalog.builtin("Nope")
    with pytest.raises(ConfigError):
        CAT.check_against(["Read"])
