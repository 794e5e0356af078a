"""Reader/writer for the harmonized OpenLABEL-based scenario profile.

Layout (snake_case keys, one scenario per ``.aveas.json`` file)::

    {"openlabel": {
        "metadata": {...}, "coordinate_systems": {...}, "resources": {...},
        "ontologies": {...}?, "contexts": {<scenario_id>: {...}},
        "objects": {<pid>: {...}}, "events": {<eid>: {...}},
        "frames": {"0": {"timestamp": t, "objects": {<pid>: {...}},
                         "unobserved_areas": [[[x, y], ...], ...]?}, ...}}}

Optional fields are omitted rather than written as null.
"""

from __future__ import annotations

import json
import math
import re
from datetime import datetime, timezone
from typing import Any, Optional

from jsonschema import Draft202012Validator

from . import canonical
from .model import (
    BBox3D,
    Context,
    CoordinateSystem,
    CoordinateSystemSet,
    Dimensions,
    EventRecord,
    Frame,
    FrameState,
    LanePosition,
    OntologyRef,
    Participant,
    ResourceLinks,
    RiskMeasureSet,
    RISK_KEYS,
    Scenario,
    ScenarioMetadata,
    ValidationReport,
    validate_scenario,
)

EXTENSION = ".aveas.json"


class ProfileError(ValueError):
    """Base class for everything ``parse`` can raise."""


class ProfileSyntaxError(ProfileError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class SchemaError(ProfileError):
    def __init__(self, path: str, message: str, report: Optional[ValidationReport] = None):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.report = report


class SemanticError(ProfileError):
    def __init__(self, report: ValidationReport):
        super().__init__("scenario violates invariants: " + report.summary())
        self.report = report


class ValidationError(ValueError):
    """Raised when asked to serialize or process an invalid scenario."""

    def __init__(self, report: ValidationReport):
        super().__init__("invalid scenario: " + report.summary())
        self.report = report


# --------------------------------------------------------------------------
# schema

_NUM = {"type": "number"}
_STR = {"type": "string"}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}


def _obj(props: dict, required: tuple = (), extra: Any = False) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": extra}


def _map(values: dict) -> dict:
    return {"type": "object", "additionalProperties": values}


_RISK = _obj({k: _NUM for k in RISK_KEYS})

_STATE = _obj(
    {
        "bbox3d": _obj({"center": _VEC3, "extent": _VEC3, "heading": _NUM},
                       ("center", "extent", "heading")),
        "lane_position": _obj({"road_id": _STR, "lane_id": {"type": "integer"}, "s": _NUM, "t": _NUM},
                              ("road_id", "lane_id", "s", "t")),
        "world_position": _VEC2,
        "speed": _NUM,
        "acceleration": _NUM,
        "yaw_rate": _NUM,
        "pitch": _NUM,
        "roll": _NUM,
        "light_states": _map({"type": "boolean"}),
        "speed_limit": _NUM,
        "traffic_condition": _STR,
        "behavior_risk": _map(_NUM),
        "pairwise_risk": _map(_RISK),
    },
    ("bbox3d", "world_position", "speed"),
)

PROFILE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["openlabel"],
    "additionalProperties": False,
    "properties": {
        "openlabel": _obj(
            {
                "metadata": _obj(
                    {
                        "scenario_id": _STR,
                        "creation_time": _STR,
                        "acquisition_method": _STR,
                        "data_use_restrictions": _STR,
                        "origin": _STR,
                        "area": _STR,
                        "scenario_duration": _NUM,
                        "dynamic_ranges": _map(_VEC2),
                    },
                    ("scenario_id", "creation_time", "acquisition_method", "data_use_restrictions",
                     "origin", "area", "scenario_duration"),
                ),
                "coordinate_systems": _obj(
                    {
                        "world_epsg": {"type": "integer"},
                        "local_origin": _VEC2,
                        "systems": _map(_obj(
                            {
                                "type": _STR,
                                "parent": _STR,
                                "transform": _obj({"rotation": _NUM, "translation": _VEC2},
                                                  ("rotation", "translation")),
                            },
                            ("type", "transform"),
                        )),
                    },
                    ("world_epsg", "local_origin", "systems"),
                ),
                "resources": _obj({"opendrive_path": _STR}),
                "ontologies": _map(_obj({"uri": _STR, "boundaries": {"type": "array", "items": _STR}})),
                "contexts": {
                    **_map(_obj({"weather": _STR, "lighting": _STR, "traffic_condition": _STR,
                                 "road_surface": _STR},
                                ("weather", "lighting", "traffic_condition", "road_surface"))),
                    "minProperties": 1,
                    "maxProperties": 1,
                },
                "objects": _map(_obj(
                    {
                        "road_user_type": _STR,
                        "dimensions": _obj({"length": _NUM, "width": _NUM, "height": _NUM},
                                           ("length", "width")),
                        "speed_range": _VEC2,
                        "collision_dynamics": {"type": "object"},
                        "steering_wheel_positions": {"type": "array", "items": _VEC2},
                    },
                    ("road_user_type", "dimensions", "speed_range"),
                )),
                "events": _map(_obj(
                    {
                        "event_type": _STR,
                        "time_interval": _VEC2,
                        "objects": _map(_obj({"movement_classification": _STR})),
                    },
                    ("time_interval", "objects"),
                )),
                "frames": {
                    **_map(_obj(
                        {
                            "timestamp": _NUM,
                            "objects": _map(_STATE),
                            "unobserved_areas": {"type": "array",
                                                 "items": {"type": "array", "items": _VEC2}},
                        },
                        ("timestamp", "objects"),
                    )),
                    "propertyNames": {"pattern": "^(0|[1-9][0-9]*)$"},
                },
            },
            ("metadata", "coordinate_systems", "resources", "contexts", "objects", "events", "frames"),
        )
    },
}

_VALIDATOR = Draft202012Validator(PROFILE_SCHEMA)


# --------------------------------------------------------------------------
# loading

class _Duplicate(Exception):
    def __init__(self, key):
        self.key = key


def _no_duplicates(pairs):
    d = {}
    for k, v in pairs:
        if k in d:
            raise _Duplicate(k)
        d[k] = v
    return d


def _path(parts) -> str:
    return "$" + "".join(f".{p}" for p in parts)


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _decode(data: bytes | str) -> Any:
    """JSON-decode or raise ProfileSyntaxError / SchemaError (duplicate key)."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            prefix = data[: exc.start].decode("utf-8", errors="replace")
            line, col = _line_col(prefix, len(prefix))
            raise ProfileSyntaxError("input is not valid UTF-8", line, col) from None
    else:
        text = data
    if text.startswith("\ufeff"):
        text = text[1:]
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ProfileSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    except _Duplicate as exc:
        raise SchemaError("$", f"duplicate key {exc.key!r}") from None


def _walk_nonfinite(node: Any, parts: list, rep: ValidationReport) -> None:
    if isinstance(node, float) and not math.isfinite(node):
        rep.error(_path(parts), "non-finite number")
    elif isinstance(node, dict):
        for k, v in node.items():
            _walk_nonfinite(v, parts + [k], rep)
    elif isinstance(node, list):
        for i, v in enumerate(node):
            _walk_nonfinite(v, parts + [i], rep)


def parse_time(value: str) -> datetime:
    txt = value.strip()
    if txt.endswith("Z") or txt.endswith("z"):
        txt = txt[:-1] + "+00:00"
    dt = datetime.fromisoformat(txt)
    if dt.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return dt.astimezone(timezone.utc)


def format_time(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc)
    fmt = "%Y-%m-%dT%H:%M:%S.%fZ" if dt.microsecond else "%Y-%m-%dT%H:%M:%SZ"
    return dt.strftime(fmt)


def _structural(doc: Any) -> ValidationReport:
    rep = ValidationReport()
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    for err in errors:
        rep.error(_path(err.absolute_path), err.message)
    _walk_nonfinite(doc, [], rep)
    if not rep.ok:
        return rep
    ol = doc["openlabel"]
    keys = sorted(int(k) for k in ol["frames"])
    if keys != list(range(len(keys))):
        rep.error("$.openlabel.frames", "non-dense frame keys: expected 0..n-1 without gaps")
    try:
        parse_time(ol["metadata"]["creation_time"])
    except ValueError as exc:
        rep.error("$.openlabel.metadata.creation_time", f"not an ISO 8601 UTC timestamp: {exc}")
    sid = ol["metadata"]["scenario_id"]
    if list(ol["contexts"]) != [sid]:
        rep.error("$.openlabel.contexts", f"context must be keyed by scenario_id {sid!r}")
    return rep


def schema_check(data: bytes | str) -> ValidationReport:
    """Structural checks only (syntax, types, required keys); never raises."""
    try:
        doc = _decode(data)
    except ProfileSyntaxError as exc:
        rep = ValidationReport()
        rep.error("$", str(exc))
        return rep
    except SchemaError as exc:
        rep = ValidationReport()
        rep.error(exc.path, str(exc).split(": ", 1)[1])
        return rep
    return _structural(doc)


# --------------------------------------------------------------------------
# document -> model

def _opt_float(d: dict, key: str) -> Optional[float]:
    return float(d[key]) if key in d else None


def _build(doc: dict) -> Scenario:
    ol = doc["openlabel"]
    md = ol["metadata"]
    sid = md["scenario_id"]
    metadata = ScenarioMetadata(
        creation_time=parse_time(md["creation_time"]),
        acquisition_method=md["acquisition_method"],
        data_use_restrictions=md["data_use_restrictions"],
        origin=md["origin"],
        area=md["area"],
        scenario_duration=float(md["scenario_duration"]),
        dynamic_ranges={k: (float(v[0]), float(v[1])) for k, v in md.get("dynamic_ranges", {}).items()},
    )
    csd = ol["coordinate_systems"]
    systems = {}
    for cid, c in csd["systems"].items():
        tr = c["transform"]
        systems[cid] = CoordinateSystem(cs_id=cid, type=c["type"], parent=c.get("parent"),
                                        rotation=float(tr["rotation"]), translation=tr["translation"])
    coords = CoordinateSystemSet(world_epsg=int(csd["world_epsg"]), local_origin=csd["local_origin"],
                                 systems=systems)
    resources = ResourceLinks(opendrive_path=ol["resources"].get("opendrive_path"))
    ontology_refs = None
    if "ontologies" in ol:
        ontology_refs = tuple(
            OntologyRef(ontology_id=oid, uri=o.get("uri"), boundaries=o.get("boundaries"))
            for oid, o in sorted(ol["ontologies"].items())
        )
    ctx = ol["contexts"][sid]
    context = Context(ctx["weather"], ctx["lighting"], ctx["traffic_condition"], ctx["road_surface"])

    participants = {}
    for pid, o in ol["objects"].items():
        dm = o["dimensions"]
        participants[pid] = Participant(
            participant_id=pid,
            road_user_type=o["road_user_type"],
            dimensions=Dimensions(float(dm["length"]), float(dm["width"]), _opt_float(dm, "height")),
            speed_range=o["speed_range"],
            collision_dynamics=o.get("collision_dynamics"),
            steering_wheel_positions=o.get("steering_wheel_positions"),
        )

    events = []
    for eid, e in ol["events"].items():
        involved = {pid: v.get("movement_classification") for pid, v in e["objects"].items()}
        events.append(EventRecord(event_id=eid, time_interval=e["time_interval"], involved=involved,
                                  event_type=e.get("event_type")))

    frames = []
    for key in sorted(ol["frames"], key=int):
        f = ol["frames"][key]
        states = {pid: _build_state(st) for pid, st in f["objects"].items()}
        frames.append(Frame(frame_id=int(key), timestamp=float(f["timestamp"]), states=states,
                            unobserved_areas=f.get("unobserved_areas", ())))

    return Scenario(scenario_id=sid, context=context, participants=participants, events=tuple(events),
                    frames=tuple(frames), metadata=metadata, coordinate_systems=coords,
                    resources=resources, ontology_refs=ontology_refs)


def _build_state(st: dict) -> FrameState:
    bb = st["bbox3d"]
    lp = st.get("lane_position")
    return FrameState(
        bbox3d=BBox3D(center=bb["center"], extent=bb["extent"], heading=float(bb["heading"])),
        world_position=st["world_position"],
        speed=float(st["speed"]),
        lane_position=None if lp is None else LanePosition(lp["road_id"], int(lp["lane_id"]),
                                                           float(lp["s"]), float(lp["t"])),
        acceleration=_opt_float(st, "acceleration"),
        yaw_rate=_opt_float(st, "yaw_rate"),
        pitch=_opt_float(st, "pitch"),
        roll=_opt_float(st, "roll"),
        light_states=None if "light_states" not in st else dict(st["light_states"]),
        speed_limit=_opt_float(st, "speed_limit"),
        traffic_condition=st.get("traffic_condition"),
        behavior_risk=None if "behavior_risk" not in st else {k: float(v) for k, v in st["behavior_risk"].items()},
        pairwise_risk={tid: RiskMeasureSet(**{k: float(v) for k, v in rm.items()})
                       for tid, rm in st.get("pairwise_risk", {}).items()},
    )


def parse(data: bytes | str) -> Scenario:
    """Parse and fully validate one profile document."""
    doc = _decode(data)
    rep = _structural(doc)
    if not rep.ok:
        first = rep.errors[0]
        raise SchemaError(first.location, first.message, rep)
    s = _build(doc)
    sem = validate_scenario(s)
    if not sem.ok:
        raise SemanticError(sem)
    return s


def parse_unchecked(data: bytes | str) -> tuple[Optional[Scenario], ValidationReport]:
    """Schema-check and build without semantic rejection; for reporting tools."""
    rep = schema_check(data)
    if not rep.ok:
        return None, rep
    s = _build(_decode(data))
    return s, validate_scenario(s)


# --------------------------------------------------------------------------
# model -> document

def _f(x: float) -> float:
    return float(x)


def to_document(s: Scenario) -> dict:
    m = s.metadata
    md: dict[str, Any] = {
        "scenario_id": s.scenario_id,
        "creation_time": format_time(m.creation_time),
        "acquisition_method": m.acquisition_method,
        "data_use_restrictions": m.data_use_restrictions,
        "origin": m.origin,
        "area": m.area,
        "scenario_duration": _f(m.scenario_duration),
    }
    if m.dynamic_ranges:
        md["dynamic_ranges"] = {k: [_f(v[0]), _f(v[1])] for k, v in m.dynamic_ranges.items()}

    cs = s.coordinate_systems
    systems = {}
    for cid, c in cs.systems.items():
        d: dict[str, Any] = {"type": c.type,
                             "transform": {"rotation": _f(c.rotation),
                                           "translation": [_f(c.translation[0]), _f(c.translation[1])]}}
        if c.parent is not None:
            d["parent"] = c.parent
        systems[cid] = d

    resources = {}
    if s.resources.opendrive_path is not None:
        resources["opendrive_path"] = s.resources.opendrive_path

    objects = {}
    for pid, p in s.participants.items():
        dims = {"length": _f(p.dimensions.length), "width": _f(p.dimensions.width)}
        if p.dimensions.height is not None:
            dims["height"] = _f(p.dimensions.height)
        o: dict[str, Any] = {"road_user_type": p.road_user_type, "dimensions": dims,
                             "speed_range": [_f(p.speed_range[0]), _f(p.speed_range[1])]}
        if p.collision_dynamics is not None:
            o["collision_dynamics"] = p.collision_dynamics
        if p.steering_wheel_positions is not None:
            o["steering_wheel_positions"] = [[_f(a), _f(b)] for a, b in p.steering_wheel_positions]
        objects[pid] = o

    events = {}
    for e in s.events:
        d = {"time_interval": [_f(e.time_interval[0]), _f(e.time_interval[1])],
             "objects": {pid: ({} if mc is None else {"movement_classification": mc})
                         for pid, mc in e.involved.items()}}
        if e.event_type is not None:
            d["event_type"] = e.event_type
        events[e.event_id] = d

    frames = {}
    for f in s.frames:
        fd: dict[str, Any] = {"timestamp": _f(f.timestamp),
                              "objects": {pid: _state_doc(st) for pid, st in f.states.items()}}
        if f.unobserved_areas:
            fd["unobserved_areas"] = [[[_f(x), _f(y)] for x, y in poly] for poly in f.unobserved_areas]
        frames[str(f.frame_id)] = fd

    c = s.context
    ol: dict[str, Any] = {
        "metadata": md,
        "coordinate_systems": {"world_epsg": int(cs.world_epsg),
                               "local_origin": [_f(cs.local_origin[0]), _f(cs.local_origin[1])],
                               "systems": systems},
        "resources": resources,
        "contexts": {s.scenario_id: {"weather": c.weather, "lighting": c.lighting,
                                     "traffic_condition": c.traffic_condition,
                                     "road_surface": c.road_surface}},
        "objects": objects,
        "events": events,
        "frames": frames,
    }
    if s.ontology_refs is not None:
        onts = {}
        for o in s.ontology_refs:
            d = {}
            if o.uri is not None:
                d["uri"] = o.uri
            if o.boundaries is not None:
                d["boundaries"] = list(o.boundaries)
            onts[o.ontology_id] = d
        ol["ontologies"] = onts
    return {"openlabel": ol}


def _state_doc(st: FrameState) -> dict:
    bb = st.bbox3d
    d: dict[str, Any] = {
        "bbox3d": {"center": [_f(v) for v in bb.center], "extent": [_f(v) for v in bb.extent],
                   "heading": _f(bb.heading)},
        "world_position": [_f(st.world_position[0]), _f(st.world_position[1])],
        "speed": _f(st.speed),
    }
    lp = st.lane_position
    if lp is not None:
        d["lane_position"] = {"road_id": lp.road_id, "lane_id": int(lp.lane_id), "s": _f(lp.s), "t": _f(lp.t)}
    for key in ("acceleration", "yaw_rate", "pitch", "roll", "speed_limit"):
        v = getattr(st, key)
        if v is not None:
            d[key] = _f(v)
    if st.light_states is not None:
        d["light_states"] = {k: bool(v) for k, v in st.light_states.items()}
    if st.traffic_condition is not None:
        d["traffic_condition"] = st.traffic_condition
    if st.behavior_risk is not None:
        d["behavior_risk"] = {k: _f(v) for k, v in st.behavior_risk.items()}
    if st.pairwise_risk:
        d["pairwise_risk"] = {tid: {k: _f(v) for k, v in rm.items()} for tid, rm in st.pairwise_risk.items()}
    return d


def serialize(s: Scenario, check: bool = True) -> bytes:
    """Canonical bytes of ``s``; raises ValidationError if ``s`` is invalid."""
    if check:
        rep = validate_scenario(s)
        if not rep.ok:
            raise ValidationError(rep)
    return canonical.dumps(to_document(s))


def read_file(path) -> Scenario:
    with open(path, "rb") as fh:
        return parse(fh.read())


def write_file(path, s: Scenario) -> None:
    canonical.write_atomic(path, serialize(s))


_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def is_safe_id(scenario_id: str) -> bool:
    """True if the id can be used verbatim as a file name."""
    return bool(_ID_RE.match(scenario_id)) and ".." not in scenario_id
