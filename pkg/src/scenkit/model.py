"""In-memory scenario types and the invariant checker.

Every type is a frozen dataclass; sequences are stored as tuples so that
structural equality is well defined and values can be shared across threads.
Optional fields use ``None`` for "absent", which is never the same as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import PurePosixPath, PureWindowsPath
from typing import Any, Iterable, Mapping, Optional

WEATHER = ("clear", "rain", "snow", "fog", "unknown")
LIGHTING = ("day", "twilight", "night", "artificial", "unknown")
TRAFFIC_CONDITION = ("free_flow", "dense", "congested", "unknown")
ROAD_SURFACE = ("dry", "wet", "icy", "unknown")
ROAD_USER_TYPES = ("car", "truck", "bus", "motorcycle", "bicycle", "pedestrian", "other")
VEHICLE_TYPES = ("car", "truck", "bus", "motorcycle", "bicycle", "other")
EVENT_TYPES = ("lane_change", "cut_in", "hard_braking", "near_miss", "collision", "handover", "other")
ACQUISITION_METHODS = ("stationary_lidar", "stationary_infrared", "aerial_rgb_video",
                       "vehicle_sensors", "synthetic")
ORIGINS = ("reconstructed", "sampled", "original")
AREAS = ("urban", "highway", "rural")
CS_TYPES = ("static", "local", "sensor")
RISK_KEYS = ("thw", "dhw", "ttc", "gttc", "pret")

SPEED_RANGE_EPS = 0.01
DURATION_TOL = 1e-3
FD_SPEED_TOL = 0.5


def _tup(seq: Iterable[Any] | None) -> tuple | None:
    return None if seq is None else tuple(seq)


def _ftup(seq: Iterable[Any]) -> tuple[float, ...]:
    return tuple(float(x) for x in seq)


def _set(obj: Any, name: str, value: Any) -> None:
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class Context:
    weather: str = "unknown"
    lighting: str = "unknown"
    traffic_condition: str = "unknown"
    road_surface: str = "unknown"


@dataclass(frozen=True)
class Dimensions:
    length: float
    width: float
    height: Optional[float] = None


@dataclass(frozen=True)
class Participant:
    participant_id: str
    road_user_type: str
    dimensions: Dimensions
    speed_range: tuple[float, float]
    collision_dynamics: Optional[dict] = None
    # (time s, steering angle rad) samples
    steering_wheel_positions: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        _set(self, "speed_range", _ftup(self.speed_range))
        if self.steering_wheel_positions is not None:
            _set(self, "steering_wheel_positions",
                 tuple(_ftup(p) for p in self.steering_wheel_positions))


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    time_interval: tuple[float, float]
    involved: dict[str, Optional[str]]
    event_type: Optional[str] = None

    def __post_init__(self):
        _set(self, "time_interval", _ftup(self.time_interval))
        _set(self, "involved", dict(self.involved))


@dataclass(frozen=True)
class BBox3D:
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    heading: float

    def __post_init__(self):
        _set(self, "center", _ftup(self.center))
        _set(self, "extent", _ftup(self.extent))


@dataclass(frozen=True)
class LanePosition:
    road_id: str
    lane_id: int
    s: float
    t: float = 0.0


@dataclass(frozen=True)
class RiskMeasureSet:
    thw: Optional[float] = None
    dhw: Optional[float] = None
    ttc: Optional[float] = None
    gttc: Optional[float] = None
    pret: Optional[float] = None

    def items(self):
        """Defined (name, value) pairs in canonical order."""
        for k in RISK_KEYS:
            v = getattr(self, k)
            if v is not None:
                yield k, v


@dataclass(frozen=True)
class FrameState:
    bbox3d: BBox3D
    world_position: tuple[float, float]
    speed: float
    lane_position: Optional[LanePosition] = None
    acceleration: Optional[float] = None
    yaw_rate: Optional[float] = None
    pitch: Optional[float] = None
    roll: Optional[float] = None
    light_states: Optional[dict[str, bool]] = None
    speed_limit: Optional[float] = None
    traffic_condition: Optional[str] = None
    behavior_risk: Optional[dict[str, float]] = None
    pairwise_risk: dict[str, RiskMeasureSet] = field(default_factory=dict)

    def __post_init__(self):
        _set(self, "world_position", _ftup(self.world_position))
        _set(self, "pairwise_risk", dict(self.pairwise_risk))


Polygon2D = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Frame:
    frame_id: int
    timestamp: float
    states: dict[str, FrameState]
    unobserved_areas: tuple[Polygon2D, ...] = ()

    def __post_init__(self):
        _set(self, "states", dict(self.states))
        _set(self, "unobserved_areas",
             tuple(tuple(_ftup(p) for p in poly) for poly in self.unobserved_areas))


@dataclass(frozen=True)
class ScenarioMetadata:
    creation_time: datetime
    acquisition_method: str
    data_use_restrictions: str
    origin: str
    area: str
    scenario_duration: float
    dynamic_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        _set(self, "dynamic_ranges", {k: _ftup(v) for k, v in self.dynamic_ranges.items()})


@dataclass(frozen=True)
class CoordinateSystem:
    cs_id: str
    type: str
    parent: Optional[str] = None
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        _set(self, "translation", _ftup(self.translation))


@dataclass(frozen=True)
class CoordinateSystemSet:
    world_epsg: int
    local_origin: tuple[float, float]
    systems: dict[str, CoordinateSystem] = field(default_factory=dict)

    def __post_init__(self):
        _set(self, "local_origin", _ftup(self.local_origin))


@dataclass(frozen=True)
class ResourceLinks:
    opendrive_path: Optional[str] = None


@dataclass(frozen=True)
class OntologyRef:
    ontology_id: str
    uri: Optional[str] = None
    boundaries: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        _set(self, "boundaries", _tup(self.boundaries))


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    context: Context
    participants: dict[str, Participant]
    events: tuple[EventRecord, ...]
    frames: tuple[Frame, ...]
    metadata: ScenarioMetadata
    coordinate_systems: CoordinateSystemSet
    resources: ResourceLinks = ResourceLinks()
    ontology_refs: Optional[tuple[OntologyRef, ...]] = None

    def __post_init__(self):
        _set(self, "participants", dict(self.participants))
        # events are keyed by id in the file, so their order carries no meaning
        _set(self, "events", tuple(sorted(self.events, key=lambda e: e.event_id)))
        _set(self, "frames", tuple(self.frames))
        _set(self, "ontology_refs", _tup(self.ontology_refs))

    @property
    def timestamps(self) -> list[float]:
        return [f.timestamp for f in self.frames]

    def event(self, event_id: str) -> EventRecord:
        for e in self.events:
            if e.event_id == event_id:
                return e
        raise KeyError(event_id)


def utc(dt: datetime) -> datetime:
    return dt.replace(tzinfo=timezone.utc) if dt.tzinfo is None else dt.astimezone(timezone.utc)


# --------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warning"
    location: str
    message: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "location": self.location, "message": self.message}


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def error(self, location: str, message: str) -> None:
        self.violations.append(Violation("error", location, message))

    def warning(self, location: str, message: str) -> None:
        self.violations.append(Violation("warning", location, message))

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def extend(self, other: "ValidationReport") -> None:
        self.violations.extend(other.violations)

    def to_dict(self) -> dict:
        return {
            "valid": self.ok,
            "errors": [v.to_dict() for v in self.errors],
            "warnings": [v.to_dict() for v in self.warnings],
        }

    def summary(self, limit: int = 5) -> str:
        errs = self.errors
        head = "; ".join(f"{v.location}: {v.message}" for v in errs[:limit])
        more = f" (+{len(errs) - limit} more)" if len(errs) > limit else ""
        return head + more


ROOT = "$.openlabel"


def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_enum(rep: ValidationReport, loc: str, value: Any, allowed: tuple[str, ...],
                optional: bool = False) -> None:
    if value is None and optional:
        return
    if value not in allowed:
        rep.error(loc, f"invalid value {value!r}; expected one of {', '.join(allowed)}")


def _observed(s: Scenario, quantity: str) -> Iterable[tuple[str, float]]:
    """(location, value) pairs of a per-frame quantity named in dynamic_ranges."""
    for f in s.frames:
        for pid, st in f.states.items():
            loc = f"{ROOT}.frames.{f.frame_id}.objects.{pid}"
            if quantity in ("speed", "acceleration", "yaw_rate", "pitch", "roll", "speed_limit"):
                v = getattr(st, quantity)
                if v is not None:
                    yield f"{loc}.{quantity}", v
            elif quantity in RISK_KEYS:
                for tid, rm in st.pairwise_risk.items():
                    v = getattr(rm, quantity)
                    if v is not None:
                        yield f"{loc}.pairwise_risk.{tid}.{quantity}", v


RANGE_QUANTITIES = ("speed", "acceleration", "yaw_rate", "pitch", "roll", "speed_limit") + RISK_KEYS


def _simple_polygon(poly: Polygon2D) -> bool:
    from shapely.geometry import Polygon

    if len(poly) < 3:
        return False
    try:
        g = Polygon(poly)
    except (ValueError, TypeError):
        return False
    return g.is_valid and g.area > 0.0


def _is_relative(path: str) -> bool:
    if "://" in path:
        return False
    return not (PurePosixPath(path).is_absolute() or PureWindowsPath(path).is_absolute()
                or PureWindowsPath(path).drive)


def validate_scenario(s: Scenario) -> ValidationReport:
    """Check every model invariant; never raises."""
    rep = ValidationReport()
    try:
        _validate(s, rep)
    except Exception as exc:  # a malformed object graph is reported, not raised
        rep.error(ROOT, f"malformed scenario object: {type(exc).__name__}: {exc}")
    return rep


def _validate(s: Scenario, rep: ValidationReport) -> None:
    if not isinstance(s.scenario_id, str) or not s.scenario_id:
        rep.error(f"{ROOT}.metadata.scenario_id", "scenario_id must be a non-empty string")

    c = s.context
    cloc = f"{ROOT}.contexts.{s.scenario_id}"
    _check_enum(rep, f"{cloc}.weather", c.weather, WEATHER)
    _check_enum(rep, f"{cloc}.lighting", c.lighting, LIGHTING)
    _check_enum(rep, f"{cloc}.traffic_condition", c.traffic_condition, TRAFFIC_CONDITION)
    _check_enum(rep, f"{cloc}.road_surface", c.road_surface, ROAD_SURFACE)

    parts = s.participants
    for pid, p in parts.items():
        loc = f"{ROOT}.objects.{pid}"
        if p.participant_id != pid:
            rep.error(loc, f"participant_id {p.participant_id!r} does not match its key")
        _check_enum(rep, f"{loc}.road_user_type", p.road_user_type, ROAD_USER_TYPES)
        d = p.dimensions
        dims = [("length", d.length), ("width", d.width)]
        if d.height is not None:
            dims.append(("height", d.height))
        for name, val in dims:
            if not _finite(val) or val < 0.0:
                rep.error(f"{loc}.dimensions.{name}", "dimension must be finite and non-negative")
            elif val == 0.0 and p.road_user_type in VEHICLE_TYPES:
                rep.error(f"{loc}.dimensions.{name}", "vehicle dimensions must be strictly positive")
        lo, hi = p.speed_range
        if not (_finite(lo) and _finite(hi)) or lo > hi:
            rep.error(f"{loc}.speed_range", "speed_range must satisfy min <= max")

    frames = s.frames
    if not frames:
        rep.error(f"{ROOT}.frames", "scenario has no frames")
    t_first = frames[0].timestamp if frames else 0.0
    t_last = frames[-1].timestamp if frames else 0.0

    for k, f in enumerate(frames):
        floc = f"{ROOT}.frames.{k}"
        if f.frame_id != k:
            rep.error(floc, f"frame_id {f.frame_id} is not dense ascending from 0 (expected {k})")
        if not _finite(f.timestamp):
            rep.error(f"{floc}.timestamp", "timestamp must be finite")
        elif k > 0 and not f.timestamp > frames[k - 1].timestamp:
            rep.error(f"{floc}.timestamp", "timestamps not strictly increasing")
        for i, poly in enumerate(f.unobserved_areas):
            if not _simple_polygon(poly):
                rep.error(f"{floc}.unobserved_areas.{i}", "polygon is not simple")
        for pid, st in f.states.items():
            sloc = f"{floc}.objects.{pid}"
            p = parts.get(pid)
            if p is None:
                rep.error(sloc, f"unknown participant {pid!r}")
            if not _finite(st.speed) or st.speed < 0.0:
                rep.error(f"{sloc}.speed", "speed must be finite and >= 0")
            elif p is not None:
                lo, hi = p.speed_range
                if st.speed < lo - SPEED_RANGE_EPS or st.speed > hi + SPEED_RANGE_EPS:
                    rep.error(f"{sloc}.speed", f"speed {st.speed} outside speed_range [{lo}, {hi}]")
            _check_enum(rep, f"{sloc}.traffic_condition", st.traffic_condition,
                        TRAFFIC_CONDITION, optional=True)
            for tid, rm in st.pairwise_risk.items():
                rloc = f"{sloc}.pairwise_risk.{tid}"
                if tid == pid:
                    rep.error(rloc, "pairwise_risk keyed by the participant's own id")
                elif tid not in parts:
                    rep.error(rloc, f"unknown participant {tid!r}")
                for name, val in rm.items():
                    if not _finite(val) or val < 0.0:
                        rep.error(f"{rloc}.{name}", "risk measure must be finite and >= 0")

    seen = set()
    for e in s.events:
        eloc = f"{ROOT}.events.{e.event_id}"
        if e.event_id in seen:
            rep.error(eloc, "duplicate event id")
        seen.add(e.event_id)
        _check_enum(rep, f"{eloc}.event_type", e.event_type, EVENT_TYPES, optional=True)
        a, b = e.time_interval
        if not (_finite(a) and _finite(b)) or a > b:
            rep.error(f"{eloc}.time_interval", "time_interval must satisfy t_start <= t_end")
        elif frames and (a < t_first - 1e-9 or b > t_last + 1e-9):
            rep.error(f"{eloc}.time_interval", "time_interval outside the frame time span")
        for pid in e.involved:
            if pid not in parts:
                rep.error(f"{eloc}.objects.{pid}", f"unknown participant {pid!r}")

    m = s.metadata
    mloc = f"{ROOT}.metadata"
    if not isinstance(m.creation_time, datetime) or m.creation_time.tzinfo is None:
        rep.error(f"{mloc}.creation_time", "creation_time must be a timezone-aware UTC timestamp")
    _check_enum(rep, f"{mloc}.acquisition_method", m.acquisition_method, ACQUISITION_METHODS)
    _check_enum(rep, f"{mloc}.origin", m.origin, ORIGINS)
    _check_enum(rep, f"{mloc}.area", m.area, AREAS)
    if (m.acquisition_method == "synthetic") != (m.origin == "sampled"):
        rep.error(f"{mloc}.origin", "acquisition_method = synthetic iff origin = sampled")
    if not _finite(m.scenario_duration):
        rep.error(f"{mloc}.scenario_duration", "scenario_duration must be finite")
    elif frames and abs(m.scenario_duration - (t_last - t_first)) > DURATION_TOL:
        rep.error(f"{mloc}.scenario_duration",
                  f"scenario_duration {m.scenario_duration} != frame span {t_last - t_first}")
    for q, (lo, hi) in m.dynamic_ranges.items():
        qloc = f"{mloc}.dynamic_ranges.{q}"
        if not (_finite(lo) and _finite(hi)) or lo > hi:
            rep.error(qloc, "range must satisfy min <= max")
            continue
        if q not in RANGE_QUANTITIES:
            rep.warning(qloc, f"quantity {q!r} is not a per-frame field; not checked")
            continue
        for vloc, v in _observed(s, q):
            if v < lo or v > hi:
                rep.error(vloc, f"{q} value {v} outside declared dynamic range [{lo}, {hi}]")

    cs = s.coordinate_systems
    csloc = f"{ROOT}.coordinate_systems"
    if isinstance(cs.world_epsg, bool) or not isinstance(cs.world_epsg, int) or cs.world_epsg <= 0:
        rep.error(f"{csloc}.world_epsg", "world_epsg must be a positive integer")
    for cid, sysd in cs.systems.items():
        sloc = f"{csloc}.systems.{cid}"
        if sysd.cs_id != cid:
            rep.error(sloc, f"cs_id {sysd.cs_id!r} does not match its key")
        _check_enum(rep, f"{sloc}.type", sysd.type, CS_TYPES)
        if sysd.parent is not None and sysd.parent not in cs.systems:
            rep.error(f"{sloc}.parent", f"unknown parent {sysd.parent!r}")
    for cid in cs.systems:
        cur, hops = cid, 0
        while cur is not None and cur in cs.systems and hops <= len(cs.systems):
            cur = cs.systems[cur].parent
            hops += 1
        if hops > len(cs.systems):
            rep.error(f"{csloc}.systems.{cid}.parent", "parent links form a cycle")

    if s.resources.opendrive_path is not None and not _is_relative(s.resources.opendrive_path):
        rep.error(f"{ROOT}.resources.opendrive_path", "path must be relative")

    if s.ontology_refs is not None:
        ids = [o.ontology_id for o in s.ontology_refs]
        if len(set(ids)) != len(ids):
            rep.error(f"{ROOT}.ontologies", "ontology ids are not unique")

    _speed_consistency(s, rep)


def _speed_consistency(s: Scenario, rep: ValidationReport) -> None:
    # central finite difference wherever a participant is present in 3 consecutive frames
    fr = s.frames
    for k in range(1, len(fr) - 1):
        a, b, c = fr[k - 1], fr[k], fr[k + 1]
        dt = c.timestamp - a.timestamp
        if not dt > 0.0:
            continue
        for pid, st in b.states.items():
            pa = a.states.get(pid)
            pc = c.states.get(pid)
            if pa is None or pc is None:
                continue
            vx = (pc.world_position[0] - pa.world_position[0]) / dt
            vy = (pc.world_position[1] - pa.world_position[1]) / dt
            fd = math.hypot(vx, vy)
            if abs(fd - st.speed) > FD_SPEED_TOL:
                rep.warning(f"{ROOT}.frames.{k}.objects.{pid}.speed",
                            f"speed {st.speed:.3f} differs from finite-difference speed {fd:.3f}")


def participants_of(s: Scenario, road_user_type: str) -> list[str]:
    return sorted(pid for pid, p in s.participants.items() if p.road_user_type == road_user_type)


def observed_range(values: Iterable[float]) -> Optional[tuple[float, float]]:
    vals = list(values)
    if not vals:
        return None
    return (min(vals), max(vals))


def with_dynamic_ranges(s: Scenario, ranges: Mapping[str, Optional[tuple[float, float]]]) -> Scenario:
    """Copy of ``s`` with the given quantities' ranges replaced (None removes)."""
    from dataclasses import replace

    dr = dict(s.metadata.dynamic_ranges)
    for q, r in ranges.items():
        if r is None:
            dr.pop(q, None)
        else:
            dr[q] = r
    return replace(s, metadata=replace(s.metadata, dynamic_ranges=dr))
