import json
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gen import random_scenario
from scenkit import canonical
from scenkit.model import validate_scenario
from scenkit.openlabel import (
    ProfileSyntaxError,
    SchemaError,
    SemanticError,
    format_time,
    is_safe_id,
    parse,
    parse_time,
    parse_unchecked,
    schema_check,
    serialize,
    to_document,
)


@pytest.fixture
def doc(rng):
    return to_document(random_scenario(rng, "fixture-1"))


def _bytes(d):
    return json.dumps(d).encode()


def test_serialize_is_canonical(rng):
    s = random_scenario(rng)
    data = serialize(s)
    assert data.endswith(b"\n")
    assert data == canonical.dumps(json.loads(data))


def test_parse_accepts_non_canonical_layout(doc):
    compact = json.dumps(doc, separators=(",", ":")).encode()
    assert serialize(parse(compact)) == canonical.dumps(doc)


def test_syntax_error_reports_position():
    with pytest.raises(ProfileSyntaxError) as exc:
        parse(b'{"openlabel": {\n  "metadata": }')
    assert exc.value.line == 2


def test_duplicate_keys_rejected(doc):
    text = json.dumps(doc)
    dup = text.replace('"openlabel": {', '"openlabel": {"frames": {}, ', 1)
    with pytest.raises(SchemaError):
        parse(dup)


@pytest.mark.parametrize("token", ["NaN", "Infinity", "-Infinity"])
def test_non_finite_numbers_rejected(doc, token):
    doc["openlabel"]["metadata"]["scenario_duration"] = 0.0
    text = json.dumps(doc).replace('"scenario_duration": 0.0', f'"scenario_duration": {token}')
    with pytest.raises(SchemaError):
        parse(text)


def test_missing_required_key(doc):
    del doc["openlabel"]["events"]
    rep = schema_check(_bytes(doc))
    assert not rep.ok
    with pytest.raises(SchemaError) as exc:
        parse(_bytes(doc))
    assert "events" in str(exc.value)


def test_unknown_key_rejected(doc):
    doc["openlabel"]["metadata"]["colour"] = "red"
    assert not schema_check(_bytes(doc)).ok


@pytest.mark.parametrize("key", ["01", "-1", "x", "1.0"])
def test_frame_keys_must_be_decimal(doc, key):
    frames = doc["openlabel"]["frames"]
    frames[key] = frames.pop("0")
    assert not schema_check(_bytes(doc)).ok


def test_frame_keys_must_be_dense(doc):
    frames = doc["openlabel"]["frames"]
    last = str(len(frames) - 1)
    frames[str(len(frames) + 3)] = frames.pop(last)
    with pytest.raises((SchemaError, SemanticError)):
        parse(_bytes(doc))


def test_context_keyed_by_scenario_id(doc):
    ctx = doc["openlabel"]["contexts"]
    ctx["other"] = ctx.pop("fixture-1")
    assert not schema_check(_bytes(doc)).ok


def test_semantic_error_carries_report(doc):
    doc["openlabel"]["metadata"]["area"] = "moon"
    with pytest.raises(SemanticError) as exc:
        parse(_bytes(doc))
    locs = [v.location for v in exc.value.report.errors]
    assert "$.openlabel.metadata.area" in locs


def test_parse_unchecked_returns_report(doc):
    doc["openlabel"]["metadata"]["area"] = "moon"
    s, rep = parse_unchecked(_bytes(doc))
    assert s is not None and not rep.ok


def test_serialize_refuses_invalid(rng):
    from dataclasses import replace

    s = random_scenario(rng)
    bad = replace(s, metadata=replace(s.metadata, area="moon"))
    with pytest.raises(Exception):
        serialize(bad)
    assert serialize(bad, check=False)


def test_ontologies_absent_vs_empty(rng):
    from dataclasses import replace

    s = random_scenario(rng)
    absent = replace(s, ontology_refs=None)
    empty = replace(s, ontology_refs=())
    assert "ontologies" not in to_document(absent)["openlabel"]
    assert to_document(empty)["openlabel"]["ontologies"] == {}
    assert parse(serialize(absent)).ontology_refs is None
    assert parse(serialize(empty)).ontology_refs == ()


def test_time_format_round_trip():
    t = datetime(2021, 3, 4, 5, 6, 7, tzinfo=timezone.utc)
    assert format_time(t) == "2021-03-04T05:06:07Z"
    t2 = t.replace(microsecond=120)
    assert format_time(t2) == "2021-03-04T05:06:07.000120Z"
    assert parse_time(format_time(t2)) == t2
    assert parse_time("2021-03-04T06:06:07+01:00") == t


@pytest.mark.parametrize("sid,ok", [("abc", True), ("a.b-c_d", True), ("..", False), ("a/b", False),
                                    ("", False), ("-x", False), ("a..b", False), ("ä", False)])
def test_safe_ids(sid, ok):
    assert is_safe_id(sid) is ok


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_round_trip_property(seed):
    s = random_scenario(np.random.default_rng(seed))
    assert validate_scenario(s).ok
    data = serialize(s)
    assert parse(data) == s
    assert serialize(parse(data)) == data
