import json
import threading
from dataclasses import replace

import numpy as np
import pytest

from gen import random_scenario
from scenkit.openlabel import serialize
from scenkit.store import (
    CorruptEntry,
    DuplicateId,
    NotFound,
    QueryFilter,
    ScenarioStore,
    ValidationFailed,
)


@pytest.fixture
def store(tmp_path):
    return ScenarioStore(tmp_path / "db")


@pytest.fixture
def scen():
    return random_scenario(np.random.default_rng(3), "s-001", area="highway", event_types=("cut_in",))


def test_ingest_and_fetch(store, scen):
    assert store.ingest(serialize(scen)) == "s-001"
    assert "s-001" in store and len(store) == 1
    assert (store.root / "highway" / "s-001.aveas.json").read_bytes() == serialize(scen)
    assert store.fetch("s-001") == scen
    entry = store.load_index()["entries"]["s-001"]
    assert entry["event_types"] == ["cut_in"]


def test_ingest_canonicalizes(store, scen):
    loose = json.dumps(json.loads(serialize(scen)), separators=(",", ":")).encode()
    store.ingest(loose)
    assert store.fetch_bytes("s-001") == serialize(scen)


def test_duplicate_rejected(store, scen):
    store.ingest_scenario(scen)
    with pytest.raises(DuplicateId):
        store.ingest_scenario(scen)
    assert len(store) == 1


def test_invalid_rejected_with_report(store, scen):
    with pytest.raises(ValidationFailed) as exc:
        store.ingest(b"{not json")
    assert not exc.value.report.ok
    doc = json.loads(serialize(scen))
    doc["openlabel"]["metadata"]["area"] = "moon"
    with pytest.raises(ValidationFailed) as exc:
        store.ingest(json.dumps(doc).encode())
    assert "$.openlabel.metadata.area" in [v.location for v in exc.value.report.errors]
    assert len(store) == 0


def test_unsafe_id_rejected(store, scen):
    with pytest.raises(ValidationFailed):
        store.ingest_scenario(replace(scen, scenario_id="../evil"))
    assert not any(store.root.parent.glob("*.aveas.json"))


def test_missing_and_corrupt(store, scen):
    with pytest.raises(NotFound):
        store.fetch("nope")
    store.ingest_scenario(scen)
    path = store.root / "highway" / "s-001.aveas.json"
    path.write_bytes(path.read_bytes().replace(b"s-001", b"s-00X", 1))
    with pytest.raises(CorruptEntry):
        store.fetch("s-001")
    assert store.verify() == ["s-001"]
    path.unlink()
    with pytest.raises(CorruptEntry):
        store.fetch_bytes("s-001")


def test_update_moves_area(store, scen):
    store.ingest_scenario(scen)
    moved = replace(scen, metadata=replace(scen.metadata, area="urban"))
    store.update(moved)
    assert store.fetch("s-001").metadata.area == "urban"
    assert not (store.root / "highway" / "s-001.aveas.json").exists()
    with pytest.raises(NotFound):
        store.update(replace(scen, scenario_id="other"))


def test_query_filters(store):
    rng = np.random.default_rng(9)
    a = random_scenario(rng, "a", area="highway", acquisition_method="aerial_rgb_video", event_types=("cut_in",),
                        duration=5.0, restrictions="research only")
    b = random_scenario(rng, "b", area="urban", acquisition_method="stationary_lidar", event_types=("lane_change",),
                        duration=12.0, restrictions="no redistribution")
    for s in (a, b):
        store.ingest_scenario(s)
    ids = lambda f: [sid for sid, _ in store.query(f)]
    assert ids(QueryFilter()) == ["a", "b"]
    assert ids(QueryFilter(areas={"urban"})) == ["b"]
    assert ids(QueryFilter(event_types={"cut_in", "lane_change"})) == ["a", "b"]
    assert ids(QueryFilter(duration=(4.0, 6.0))) == ["a"]
    assert ids(QueryFilter(text="RESEARCH")) == ["a"]
    assert ids(QueryFilter(areas={"urban"}, text="research")) == []
    assert ids(QueryFilter(dynamic_ranges={"no_such": (0.0, 1.0)})) == []


def test_reindex_reproduces_and_reports(store, scen):
    store.ingest_scenario(scen)
    store.ingest_scenario(random_scenario(np.random.default_rng(4), "s-002", area="urban"))
    before = store.index_path.read_bytes()
    store.index_path.unlink()
    index, problems = store.reindex()
    assert problems == []
    assert store.index_path.read_bytes() == before
    (store.root / "urban" / "junk.aveas.json").write_bytes(b"[]")
    (store.root / "rural").mkdir()
    (store.root / "rural" / "dup.aveas.json").write_bytes(serialize(scen))
    index, problems = store.reindex()
    # files are scanned in sorted order, so the later copy is the duplicate
    assert [p for p, _ in problems] == ["rural/dup.aveas.json", "urban/junk.aveas.json"]
    assert set(index["entries"]) == {"s-001", "s-002"}


def test_concurrent_ingest(store):
    scens = [random_scenario(np.random.default_rng(i), f"c-{i:02d}") for i in range(12)]
    threads = [threading.Thread(target=store.ingest_scenario, args=(s,)) for s in scens]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.ids() == [s.scenario_id for s in scens]


def test_open_missing_root(tmp_path):
    with pytest.raises(NotFound):
        ScenarioStore(tmp_path / "absent", create=False)
