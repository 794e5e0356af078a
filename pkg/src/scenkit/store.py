"""File-backed scenario database.

Layout::

    <root>/index.json                  canonical JSON index
    <root>/<area>/<scenario_id>.aveas.json
    <root>/.lock                       advisory writer lock

Files hold canonical bytes, so the index entry hash (SHA-256 of the file)
doubles as a content hash of the scenario. Writers take the lock; readers
only ever see a complete index because it is replaced by rename.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from filelock import FileLock

from . import canonical
from .model import Scenario, ValidationReport
from .openlabel import EXTENSION, ProfileError, SchemaError, SemanticError, ProfileSyntaxError, \
    is_safe_id, parse, serialize, to_document

INDEX_NAME = "index.json"
INDEX_VERSION = 1


class StoreError(Exception):
    pass


class DuplicateId(StoreError):
    pass


class NotFound(StoreError):
    pass


class CorruptEntry(StoreError):
    pass


class ValidationFailed(StoreError):
    def __init__(self, message: str, report: ValidationReport):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class QueryFilter:
    """Conjunction of optional predicates; ``None`` means unconstrained."""

    areas: Optional[frozenset[str]] = None
    acquisition_methods: Optional[frozenset[str]] = None
    origins: Optional[frozenset[str]] = None
    event_types: Optional[frozenset[str]] = None
    duration: Optional[tuple[float, float]] = None
    # quantity -> [lo, hi]; the scenario's declared range must overlap it
    dynamic_ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    text: Optional[str] = None

    def __post_init__(self):
        for name in ("areas", "acquisition_methods", "origins", "event_types"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, frozenset):
                object.__setattr__(self, name, frozenset(v))

    def matches(self, metadata: Mapping, event_types: Iterable[str]) -> bool:
        """Evaluate against an index entry (metadata as stored in the profile)."""
        if self.areas is not None and metadata["area"] not in self.areas:
            return False
        if self.acquisition_methods is not None and metadata["acquisition_method"] not in self.acquisition_methods:
            return False
        if self.origins is not None and metadata["origin"] not in self.origins:
            return False
        if self.event_types is not None and not self.event_types.intersection(event_types):
            return False
        if self.duration is not None:
            lo, hi = self.duration
            if not lo <= metadata["scenario_duration"] <= hi:
                return False
        ranges = metadata.get("dynamic_ranges", {})
        for q, (lo, hi) in self.dynamic_ranges.items():
            r = ranges.get(q)
            if r is None or r[1] < lo or r[0] > hi:
                return False
        if self.text is not None and self.text.lower() not in metadata["data_use_restrictions"].lower():
            return False
        return True


def _entry(rel_path: str, data: bytes, s: Scenario) -> dict:
    return {
        "path": rel_path,
        "sha256": canonical.sha256_hex(data),
        "metadata": to_document(s)["openlabel"]["metadata"],
        "event_types": sorted({e.event_type for e in s.events if e.event_type is not None}),
    }


def _empty_index() -> dict:
    return {"version": INDEX_VERSION, "entries": {}}


class ScenarioStore:
    def __init__(self, root: str | os.PathLike, create: bool = True):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise NotFound(f"store root {self.root} does not exist")
        self._lock = FileLock(str(self.root / ".lock"))

    @property
    def index_path(self) -> Path:
        return self.root / INDEX_NAME

    def load_index(self) -> dict:
        try:
            with open(self.index_path, "rb") as fh:
                return json.loads(fh.read().decode("utf-8"))
        except FileNotFoundError:
            return _empty_index()

    def _write_index(self, index: dict) -> None:
        canonical.write_atomic(self.index_path, canonical.dumps(index))

    def ids(self) -> list[str]:
        return sorted(self.load_index()["entries"])

    def __contains__(self, scenario_id: str) -> bool:
        return scenario_id in self.load_index()["entries"]

    def __len__(self) -> int:
        return len(self.load_index()["entries"])

    # -- writers -----------------------------------------------------------

    def ingest(self, data: bytes) -> str:
        """Validate, copy in canonical form and index; returns the scenario id."""
        try:
            s = parse(data)
        except ProfileSyntaxError as exc:
            rep = ValidationReport()
            rep.error("$", str(exc))
            raise ValidationFailed(str(exc), rep) from None
        except (SchemaError, SemanticError) as exc:
            rep = exc.report if exc.report is not None else ValidationReport()
            if not rep.violations:
                rep.error(getattr(exc, "path", "$"), str(exc))
            raise ValidationFailed(str(exc), rep) from None
        return self.ingest_scenario(s)

    def ingest_scenario(self, s: Scenario) -> str:
        sid = s.scenario_id
        if not is_safe_id(sid):
            rep = ValidationReport()
            rep.error("$.openlabel.metadata.scenario_id", f"id {sid!r} is not usable as a file name")
            raise ValidationFailed(f"unsafe scenario id {sid!r}", rep)
        data = serialize(s)
        rel = f"{s.metadata.area}/{sid}{EXTENSION}"
        with self._lock:
            index = self.load_index()
            if sid in index["entries"]:
                raise DuplicateId(sid)
            canonical.write_atomic(self.root / rel, data)
            index["entries"][sid] = _entry(rel, data, s)
            self._write_index(index)
        return sid

    def update(self, s: Scenario) -> None:
        """Replace a stored scenario (same id) and refresh its index entry."""
        sid = s.scenario_id
        data = serialize(s)
        rel = f"{s.metadata.area}/{sid}{EXTENSION}"
        with self._lock:
            index = self.load_index()
            old = index["entries"].get(sid)
            if old is None:
                raise NotFound(sid)
            canonical.write_atomic(self.root / rel, data)
            index["entries"][sid] = _entry(rel, data, s)
            self._write_index(index)
            if old["path"] != rel:
                try:
                    (self.root / old["path"]).unlink()
                except FileNotFoundError:
                    pass

    def reindex(self) -> tuple[dict, list[tuple[str, str]]]:
        """Rebuild the index by scanning files; returns (index, problems).

        Unparsable files and duplicate ids are excluded and reported as
        (relative path, message).
        """
        index = _empty_index()
        problems: list[tuple[str, str]] = []
        with self._lock:
            files = sorted(p for p in self.root.glob(f"*/*{EXTENSION}") if p.is_file())
            for path in files:
                rel = path.relative_to(self.root).as_posix()
                data = path.read_bytes()
                try:
                    s = parse(data)
                except ProfileError as exc:
                    problems.append((rel, str(exc)))
                    continue
                if s.scenario_id in index["entries"]:
                    problems.append((rel, f"duplicate scenario id {s.scenario_id!r}"))
                    continue
                index["entries"][s.scenario_id] = _entry(rel, data, s)
            self._write_index(index)
        return index, problems

    # -- readers -----------------------------------------------------------

    def query(self, f: QueryFilter = QueryFilter()) -> list[tuple[str, dict]]:
        entries = self.load_index()["entries"]
        return [(sid, e["metadata"]) for sid, e in sorted(entries.items())
                if f.matches(e["metadata"], e["event_types"])]

    def fetch_bytes(self, scenario_id: str) -> bytes:
        e = self.load_index()["entries"].get(scenario_id)
        if e is None:
            raise NotFound(scenario_id)
        try:
            data = (self.root / e["path"]).read_bytes()
        except FileNotFoundError:
            raise CorruptEntry(f"{scenario_id}: file {e['path']} is missing") from None
        if canonical.sha256_hex(data) != e["sha256"]:
            raise CorruptEntry(f"{scenario_id}: content hash mismatch")
        return data

    def fetch(self, scenario_id: str) -> Scenario:
        data = self.fetch_bytes(scenario_id)
        try:
            return parse(data)
        except ProfileError as exc:
            raise CorruptEntry(f"{scenario_id}: {exc}") from None

    def verify(self) -> list[str]:
        """Ids whose file is missing or no longer matches its recorded hash."""
        bad = []
        for sid in self.ids():
            try:
                self.fetch_bytes(sid)
            except CorruptEntry:
                bad.append(sid)
        return bad
