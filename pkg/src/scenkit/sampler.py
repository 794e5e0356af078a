"""Critical-scenario variation around a recorded cut-in.

A recorded lane change provides the start state: the cutting-in vehicle,
the vehicle approaching it from behind in the target lane, and their gap
and speed difference at the start of the event. A sweep varies the gap
and/or the speed difference over a grid, simulates each point and scores
it with the required deceleration of the approaching vehicle.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import canonical
from .model import EventRecord, Scenario
from .sim import ModelParams, SimConfig, SimTrace, VehicleInit, simulate, trace_to_scenario
from .sim.core import required_deceleration, vehicle_id
from .sim.params import VEHICLE_CLASSES, ConfigError

VARIED_PARAMETERS = ("cut_in_gap", "approach_speed_delta")
SCENARIO_TYPES = ("lane_change_cut_in",)
START_EVENT_TYPES = ("lane_change", "cut_in")
# road long enough that the pair never runs off an open road
_ROAD_LENGTH = 100_000.0


class NoSuchEvent(LookupError):
    pass


class MissingStates(LookupError):
    pass


@dataclass(frozen=True)
class Variation:
    parameter: str
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def from_range(cls, parameter: str, lo: float, hi: float, n_steps: int) -> "Variation":
        if int(n_steps) < 2:
            raise ConfigError("a range needs n_steps >= 2")
        return cls(parameter, tuple(np.linspace(float(lo), float(hi), int(n_steps)).tolist()))

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "values": list(self.values)}


@dataclass(frozen=True)
class VariationSpec:
    base_scenario_id: str
    varied: tuple[Variation, ...]
    scenario_type: str = "lane_change_cut_in"
    event_id: Optional[str] = None  # first lane change when omitted
    params: ModelParams = field(default_factory=ModelParams)
    duration: float = 20.0
    dt: float = 0.05
    record_interval: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "varied", tuple(self.varied))

    def validate(self) -> None:
        problems = []
        if self.scenario_type not in SCENARIO_TYPES:
            problems.append(f"scenario_type must be one of {SCENARIO_TYPES}")
        if not self.varied:
            problems.append("at least one varied parameter is required")
        names = [v.parameter for v in self.varied]
        if len(set(names)) != len(names):
            problems.append("each parameter may be varied only once")
        for var in self.varied:
            if var.parameter not in VARIED_PARAMETERS:
                problems.append(f"unknown varied parameter {var.parameter!r}")
            if not var.values:
                problems.append(f"{var.parameter}: no values")
            if not all(math.isfinite(x) for x in var.values):
                problems.append(f"{var.parameter}: values must be finite")
            if var.parameter == "cut_in_gap" and any(x <= 0.0 for x in var.values):
                problems.append("cut_in_gap values must be > 0")
        if not self.duration > 0.0:
            problems.append("duration must be > 0")
        if problems:
            raise ConfigError("invalid variation spec: " + "; ".join(problems))
        self.params.validate()

    def grid(self) -> list[dict[str, float]]:
        """Cartesian product of the varied values; the first parameter varies slowest."""
        names = [v.parameter for v in self.varied]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v.values for v in self.varied))]

    def to_dict(self) -> dict:
        d = {
            "base_scenario_id": self.base_scenario_id,
            "scenario_type": self.scenario_type,
            "varied": [v.to_dict() for v in self.varied],
            "params": self.params.to_dict(),
            "duration": self.duration,
            "dt": self.dt,
            "record_interval": self.record_interval,
        }
        if self.event_id is not None:
            d["event_id"] = self.event_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base: Optional[Scenario] = None) -> "VariationSpec":
        """Build from JSON.

        Each entry of ``varied`` gives ``values`` (a list), ``range``
        ([lo, hi, n_steps]) or ``from_ranges`` (n_steps, bounds taken from
        the dynamic ranges of ``base``).
        """
        known = {"base_scenario_id", "scenario_type", "varied", "params", "event_id", "duration", "dt",
                 "record_interval"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown variation spec keys: {sorted(unknown)}")
        varied = []
        for item in d.get("varied", []):
            name = item.get("parameter")
            if "values" in item:
                varied.append(Variation(name, item["values"]))
            elif "range" in item:
                lo, hi, n = item["range"]
                varied.append(Variation.from_range(name, lo, hi, n))
            elif "from_ranges" in item:
                if base is None:
                    raise ConfigError("from_ranges needs the base scenario")
                lo, hi = observed_bounds(base, name)
                varied.append(Variation.from_range(name, lo, hi, item["from_ranges"]))
            else:
                raise ConfigError(f"varied entry for {name!r} needs values, range or from_ranges")
        kw: dict[str, Any] = {k: d[k] for k in ("scenario_type", "event_id") if k in d}
        for k in ("duration", "dt", "record_interval"):
            if k in d:
                kw[k] = float(d[k])
        if "params" in d:
            kw["params"] = ModelParams.from_dict(d["params"])
        return cls(base_scenario_id=d["base_scenario_id"], varied=tuple(varied), **kw)


def observed_bounds(base: Scenario, parameter: str) -> tuple[float, float]:
    """Grid bounds from the base scenario's dynamic ranges.

    The gap uses the observed distance-headway range; the speed difference
    runs from 0 to the width of the observed speed range.
    """
    dr = base.metadata.dynamic_ranges
    if parameter == "cut_in_gap":
        if "dhw" not in dr:
            raise ConfigError("base scenario has no dhw dynamic range; annotate metrics first")
        lo, hi = dr["dhw"]
        return max(lo, 0.5), max(hi, max(lo, 0.5) + 1.0)
    if parameter == "approach_speed_delta":
        if "speed" not in dr:
            raise ConfigError("base scenario has no speed dynamic range")
        lo, hi = dr["speed"]
        return 0.0, max(hi - lo, 1.0)
    raise ConfigError(f"unknown varied parameter {parameter!r}")


@dataclass(frozen=True)
class StartVehicle:
    participant_id: str
    vehicle_class: str
    lane_id: int
    s: float
    speed: float
    length: float


@dataclass(frozen=True)
class StartState:
    scenario_id: str
    event_id: str
    t_start: float
    cut_in: str  # participant changing lanes
    approaching: str  # follower in the target lane
    vehicles: tuple[StartVehicle, ...]  # cut-in vehicle, approaching vehicle, target-lane leader if any
    config: SimConfig

    def vehicle(self, pid: str) -> StartVehicle:
        for v in self.vehicles:
            if v.participant_id == pid:
                return v
        raise KeyError(pid)

    @property
    def gap(self) -> float:
        c, a = self.vehicle(self.cut_in), self.vehicle(self.approaching)
        return c.s - a.s - 0.5 * (c.length + a.length)

    @property
    def approach_speed_delta(self) -> float:
        return self.vehicle(self.approaching).speed - self.vehicle(self.cut_in).speed


def _frame_at(s: Scenario, t: float) -> int:
    # last frame at or before t, the first frame if t precedes all of them
    times = [f.timestamp for f in s.frames]
    k = int(np.searchsorted(times, t + 1e-9, side="right")) - 1
    return max(k, 0)


def extract_start_state(s: Scenario, event: Optional[EventRecord] = None) -> StartState:
    """Start state of a recorded lane change at its start time.

    The target lane is where the changing participant is found after the
    event; the approaching vehicle is its nearest follower there.
    """
    if event is None:
        candidates = [e for e in s.events if e.event_type in START_EVENT_TYPES]
        if not candidates:
            raise NoSuchEvent(f"scenario {s.scenario_id} has no lane_change event")
        event = candidates[0]
    elif event.event_type not in START_EVENT_TYPES:
        raise NoSuchEvent(f"event {event.event_id} is not a lane change")
    if not s.frames:
        raise MissingStates("scenario has no frames")
    t0, t1 = event.time_interval
    k0 = _frame_at(s, t0)
    frame = s.frames[k0]
    for pid in event.involved:
        if pid not in frame.states:
            raise MissingStates(f"participant {pid} absent at t={frame.timestamp}")
    changer = next(iter(event.involved))
    st = frame.states[changer]
    if st.lane_position is None:
        raise MissingStates(f"participant {changer} has no lane position at t={frame.timestamp}")
    road, src = st.lane_position.road_id, st.lane_position.lane_id
    target = None
    for f in s.frames[k0:]:
        if f.timestamp < t1 - 1e-9:
            continue
        later = f.states.get(changer)
        if later is not None and later.lane_position is not None and later.lane_position.lane_id != src:
            target = later.lane_position.lane_id
            break
    if target is None:
        role = event.involved[changer]
        if role not in ("to_left", "to_right"):
            raise MissingStates(f"cannot tell the target lane of {changer}")
        target = src + (1 if role == "to_left" else -1)

    def start_vehicle(pid, lane_id):
        fs = frame.states[pid]
        return StartVehicle(pid, s.participants[pid].road_user_type, lane_id, fs.lane_position.s,
                            fs.speed, s.participants[pid].dimensions.length)

    me = start_vehicle(changer, target)
    behind, ahead = [], []
    for pid, fs in frame.states.items():
        lp = fs.lane_position
        if pid == changer or lp is None or lp.road_id != road or lp.lane_id != target:
            continue
        (behind if lp.s < me.s else ahead).append((lp.s, pid))
    if not behind:
        raise MissingStates(f"no vehicle behind {changer} in lane {target} at t={frame.timestamp}")
    follower = start_vehicle(max(behind)[1], target)
    vehicles = [me, follower]
    if ahead:
        vehicles.append(start_vehicle(min(ahead)[1], target))
    for v in vehicles:
        if v.vehicle_class not in VEHICLE_CLASSES:
            raise MissingStates(f"participant {v.participant_id} has unsupported class {v.vehicle_class!r}")
    origin = follower.s
    cfg = SimConfig(
        n_lanes=1, road_length=_ROAD_LENGTH, topology="open",
        n_vehicles={c: 0 for c in VEHICLE_CLASSES}, lane_changes=False,
        initial=tuple(VehicleInit(v.vehicle_class, 0, v.s - origin + 0.5 * follower.length, v.speed, v.speed)
                      for v in sorted(vehicles, key=lambda v: v.s)),
    )
    return StartState(s.scenario_id, event.event_id, frame.timestamp, changer, follower.participant_id,
                      tuple(vehicles), cfg)


@dataclass
class CriticalityOutcome:
    values: dict[str, float]
    a_req: float
    crashed: bool
    min_gap: float
    min_ttc: Optional[float]
    approaching_class: str
    trace: Optional[SimTrace] = field(default=None, repr=False, compare=False)

    def row(self, names: Sequence[str]) -> dict:
        d = {n: self.values[n] for n in names}
        d.update(a_req=self.a_req, crashed=self.crashed, min_gap=self.min_gap, min_ttc=self.min_ttc)
        return d


def _pair_config(start: StartState, gap: float, dv: float, spec: VariationSpec) -> tuple[SimConfig, float, float]:
    a, c = start.vehicle(start.approaching), start.vehicle(start.cut_in)
    v_c = c.speed
    v_a = v_c + dv
    if v_a < 0.0:
        raise ConfigError(f"approach_speed_delta {dv} gives a negative approach speed")
    s_a = 0.5 * a.length
    s_c = s_a + 0.5 * a.length + gap + 0.5 * c.length
    cfg = SimConfig(
        n_lanes=1, road_length=_ROAD_LENGTH, topology="open", n_vehicles={k: 0 for k in VEHICLE_CLASSES},
        dt=spec.dt, duration=spec.duration, record_interval=spec.record_interval, lane_changes=False,
        initial=(VehicleInit(a.vehicle_class, 0, s_a, v_a, v_a), VehicleInit(c.vehicle_class, 0, s_c, v_c, v_c)),
    )
    return cfg, v_a, v_c


def _run_point(start: StartState, values: dict[str, float], spec: VariationSpec) -> CriticalityOutcome:
    gap = values.get("cut_in_gap", start.gap)
    dv = values.get("approach_speed_delta", start.approach_speed_delta)
    if not gap > 0.0:
        raise ConfigError(f"cut-in gap must be > 0, got {gap}")
    cfg, v_a, v_c = _pair_config(start, gap, dv, spec)
    cls = start.vehicle(start.approaching).vehicle_class
    a_req = required_deceleration(v_a, v_c, gap, spec.params.cc0)
    trace = simulate(cfg, spec.params)
    # pair gap taken directly: after a collision the follower may pass through the leader
    g = trace.s[:, 1] - trace.s[:, 0] - 0.5 * (trace.length[0] + trace.length[1])
    closing = trace.v[:, 0] - trace.v[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ttc = np.where(closing > 0.0, np.maximum(g, 0.0) / closing, np.inf)
    m = float(ttc.min())
    return CriticalityOutcome(
        values={k: float(v) for k, v in values.items()},
        a_req=a_req,
        crashed=a_req > spec.params.max_decel[cls],
        min_gap=float(g.min()),
        min_ttc=m if math.isfinite(m) else None,
        approaching_class=cls,
        trace=trace,
    )


def sweep(spec: VariationSpec, base: Scenario | StartState, threads: Optional[int] = None) -> list[CriticalityOutcome]:
    """One outcome per grid point, in grid order.

    Each point simulates the approaching and cut-in vehicles alone on a
    straight single lane, both holding their start speeds as desired speeds.
    """
    spec.validate()
    if isinstance(base, StartState):
        start = base
    else:
        event = None
        if spec.event_id is not None:
            try:
                event = base.event(spec.event_id)
            except KeyError:
                raise NoSuchEvent(f"scenario {base.scenario_id} has no event {spec.event_id!r}") from None
        start = extract_start_state(base, event)
    grid = spec.grid()
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda v: _run_point(start, v, spec), grid))
    return [_run_point(start, v, spec) for v in grid]


def sample_id(spec: VariationSpec, outcome: CriticalityOutcome) -> str:
    digest = canonical.sha256_hex(canonical.dumps({"spec": spec.to_dict(), "values": outcome.values}))
    return f"cutin-{digest[:16]}"


def emit_samples(outcomes: Sequence[CriticalityOutcome], threshold: float, spec: VariationSpec,
                 area: str = "highway") -> list[Scenario]:
    """Scenarios for every outcome with a_req >= threshold.

    The realized a_req is attached to the approaching vehicle's first state
    as behavior risk; an unavoidable collision (infinite a_req) is stored as
    ``certain_collision = 1`` because the format has no infinities.
    """
    out = []
    for o in outcomes:
        if not o.a_req >= threshold:
            continue
        if o.trace is None:
            raise ValueError("outcome carries no trace")
        risk = {"a_req": o.a_req} if math.isfinite(o.a_req) else {"certain_collision": 1.0}
        cut = EventRecord("cutin00000", (0.0, 0.0),
                          {vehicle_id(1): "cut_in_vehicle", vehicle_id(0): "approaching"}, "cut_in")
        out.append(trace_to_scenario(
            o.trace, scenario_id=sample_id(spec, o), area=area,
            data_use_restrictions=f"synthetic variation of {spec.base_scenario_id}",
            extra_events=(cut,), behavior_risk={(0, 0): risk},
        ))
    return out


def outcomes_csv(outcomes: Sequence[CriticalityOutcome], names: Sequence[str]) -> str:
    """CSV report: varied parameters, a_req, crashed, min_gap, min_ttc (empty when never closing)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*names, "a_req", "crashed", "min_gap", "min_ttc"])
    for o in outcomes:
        w.writerow([*(repr(o.values[n]) for n in names), repr(o.a_req), str(o.crashed).lower(),
                    repr(o.min_gap), "" if o.min_ttc is None else repr(o.min_ttc)])
    return buf.getvalue()
