"""Simulation driver, traces and conversion to scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from .. import canonical
from ..model import (
    BBox3D,
    Context,
    CoordinateSystem,
    CoordinateSystemSet,
    Dimensions,
    EventRecord,
    Frame,
    FrameState,
    LanePosition,
    Participant,
    ResourceLinks,
    Scenario,
    ScenarioMetadata,
)
from . import _backend, rng
from .params import (
    DEFAULT_DIMENSIONS,
    LANE_CHANGE_COOLDOWN,
    LANE_CHANGE_LOOKAHEAD,
    LANE_WIDTH,
    VEHICLE_CLASSES,
    ConfigError,
    ModelParams,
    SimConfig,
)

# fixed creation time for synthetic scenarios keeps output reproducible
SIM_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


def required_deceleration(v_follow: float, v_lead: float, gap: float, cc0: float) -> float:
    """Constant braking for the follower to stop closing before the gap drops below cc0.

    a_req = dv^2 / (2 (gap - cc0)) with dv = v_follow - v_lead; 0 when not
    closing, +inf when closing with no room left.
    """
    dv = v_follow - v_lead
    if dv <= 0.0:
        return 0.0
    room = gap - cc0
    if room <= 0.0:
        return math.inf
    return dv * dv / (2.0 * room)


@dataclass
class SimTrace:
    config: SimConfig
    params: ModelParams
    classes: tuple[str, ...]
    length: np.ndarray
    width: np.ndarray
    height: np.ndarray
    desired_speed: np.ndarray
    times: np.ndarray  # (F,)
    lane: np.ndarray  # (F, n) int32
    s: np.ndarray  # (F, n)
    v: np.ndarray
    a: np.ndarray
    lane_changes: np.ndarray  # (k, 6): t, vehicle, from, to, lead gap, lag gap
    collisions: np.ndarray  # (k, 3): t, follower, leader
    n_lane_changes: int
    n_collisions: int
    backend: str = field(default="python")

    @property
    def n_vehicles(self) -> int:
        return len(self.classes)

    @property
    def collision_free(self) -> bool:
        return self.n_collisions == 0

    def leaders(self) -> np.ndarray:
        """(F, n) index of the leader in the same lane, -1 if none."""
        F, n = self.s.shape
        ring = self.config.topology == "ring"
        out = np.full((F, n), -1, dtype=np.intp)
        for k in range(F):
            order = np.lexsort((np.arange(n), self.s[k], self.lane[k]))
            ln = self.lane[k][order]
            nxt = np.empty(n, dtype=np.intp)
            nxt[:-1] = order[1:]
            same = np.zeros(n, dtype=bool)
            same[:-1] = ln[1:] == ln[:-1]
            if ring:
                # last vehicle of each lane follows the first of the same lane
                starts = np.flatnonzero(np.r_[True, ln[1:] != ln[:-1]])
                ends = np.r_[starts[1:], n] - 1
                for a, b in zip(starts, ends):
                    if b > a:
                        nxt[b] = order[a]
                        same[b] = True
            lead = np.where(same, nxt, -1)
            out[k, order] = lead
        return out

    def gaps(self) -> np.ndarray:
        """(F, n) bumper-to-bumper gap to the same-lane leader, NaN if none."""
        lead = self.leaders()
        has = lead >= 0
        idx = np.where(has, lead, 0)
        rows = np.arange(self.s.shape[0])[:, None]
        d = self.s[rows, idx] - self.s
        if self.config.topology == "ring":
            d = np.where(d < 0.0, d + self.config.road_length, d)
        g = d - 0.5 * (self.length[None, :] + self.length[idx])
        return np.where(has, g, np.nan)

    def class_mask(self, cls: Optional[str]) -> np.ndarray:
        if cls is None:
            return np.ones(self.n_vehicles, dtype=bool)
        return np.array([c == cls for c in self.classes])

    def frame_mask(self, warmup: float = 0.0) -> np.ndarray:
        return self.times >= warmup - 1e-9

    def world_pose(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World x, y, heading per frame and vehicle.

        Ring roads are laid out as concentric circles sharing one angle per
        s-coordinate; lane 0 is the outermost. Open roads run along +x.
        """
        cfg = self.config
        lane_off = (self.lane - 0.5 * (cfg.n_lanes - 1)) * LANE_WIDTH
        if cfg.topology == "ring":
            radius = cfg.road_length / (2.0 * math.pi)
            theta = self.s / radius
            r = radius - lane_off
            return r * np.cos(theta), r * np.sin(theta), np.mod(theta + 0.5 * math.pi, 2.0 * math.pi)
        return self.s.copy(), lane_off, np.zeros_like(self.s)


def _participants(cfg: SimConfig) -> list[str]:
    if cfg.initial is not None:
        return [vi.vehicle_class for vi in cfg.initial]
    return [c for c in VEHICLE_CLASSES for _ in range(cfg.n_vehicles.get(c, 0))]


def _initial_state(cfg: SimConfig, params: ModelParams, classes: Sequence[str], length: np.ndarray,
                   vdes: np.ndarray):
    n = len(classes)
    lane = np.zeros(n, dtype=np.int32)
    s = np.zeros(n)
    v = np.zeros(n)
    if cfg.initial is not None:
        for i, vi in enumerate(cfg.initial):
            lane[i], s[i], v[i] = vi.lane, vi.s, vi.speed
        for ln in range(cfg.n_lanes):
            idx = np.flatnonzero(lane == ln)
            idx = idx[np.argsort(s[idx], kind="stable")]
            for a, b in zip(idx[:-1], idx[1:]):
                if s[b] - s[a] < 0.5 * (length[a] + length[b]):
                    raise ConfigError(f"initial footprints of vehicles {a} and {b} overlap")
        return lane, s, v
    if n == 0:
        return lane, s, v
    need = float(np.sum(length + params.cc0))
    if need > cfg.n_lanes * cfg.road_length:
        raise ConfigError(f"infeasible density: vehicles need {need:.1f} m of road, "
                          f"{cfg.n_lanes} x {cfg.road_length:.1f} m available")
    per_lane = math.ceil(n / cfg.n_lanes)
    spacing = cfg.road_length / per_lane
    if spacing < float(length.max()) + params.cc0:
        raise ConfigError("infeasible density: even spacing leaves less than a vehicle length plus cc0")
    slots = rng.stream(cfg.seed, rng.STREAM_PLACEMENT).permutation(n)
    for i, k in enumerate(slots):
        ln = int(k) % cfg.n_lanes
        lane[i] = ln
        s[i] = (int(k) // cfg.n_lanes) * spacing + ln * spacing / cfg.n_lanes
        v[i] = cfg.initial_speed_factor * vdes[i]
    return lane, s, v


def simulate(cfg: SimConfig, params: ModelParams, backend: Optional[str] = None) -> SimTrace:
    """Run one deterministic simulation; same (cfg, params) gives the same trace bit for bit."""
    cfg.validate()
    params.validate()
    kernel = _backend.get_kernel(backend)
    classes = _participants(cfg)
    n = len(classes)
    dims = np.array([DEFAULT_DIMENSIONS[c] for c in classes], dtype=np.float64).reshape(n, 3)
    length = np.ascontiguousarray(dims[:, 0])
    vdes = np.empty(n)
    for i, c in enumerate(classes):
        given = cfg.initial[i].desired_speed if cfg.initial is not None else None
        if given is not None:
            vdes[i] = given
        else:
            mean, std = params.desired_speed[c]
            vdes[i] = rng.desired_speed(cfg.seed, i, mean, std)
    bmax = np.array([params.max_decel[c] for c in classes], dtype=np.float64)
    lane, s, v = _initial_state(cfg, params, classes, length, vdes)
    a = np.zeros(n)

    n_steps = cfg.n_steps
    rec = cfg.record_every
    n_frames = n_steps // rec + 1
    out_lane = np.zeros((n_frames, n), dtype=np.int32)
    out_s = np.zeros((n_frames, n))
    out_v = np.zeros((n_frames, n))
    out_a = np.zeros((n_frames, n))
    lc_cap = (n * (int(cfg.duration / LANE_CHANGE_COOLDOWN) + 1) + 1) if cfg.lane_changes else 1
    lc_log = np.zeros((lc_cap, 6))
    col_log = np.zeros((8 * n + 16, 3))
    lc = params.lane_change
    lcp = np.array([lc.min_gap_lead, lc.min_gap_lag, lc.speed_advantage_threshold,
                    LANE_CHANGE_COOLDOWN, LANE_CHANGE_LOOKAHEAD], dtype=np.float64)
    n_lc, n_col = kernel.run(
        lane, s, v, a, length, vdes, bmax, params.w99_vector(), lcp, bool(cfg.lane_changes),
        cfg.topology == "ring", float(cfg.road_length), int(cfg.n_lanes), float(cfg.dt), int(n_steps),
        int(rec), out_lane, out_s, out_v, out_a, lc_log, col_log,
    )
    times = np.round(np.arange(n_frames) * (rec * cfg.dt), 9)
    return SimTrace(
        config=cfg, params=params, classes=tuple(classes), length=length,
        width=np.ascontiguousarray(dims[:, 1]), height=np.ascontiguousarray(dims[:, 2]),
        desired_speed=vdes, times=times, lane=out_lane, s=out_s, v=out_v, a=out_a,
        lane_changes=lc_log[: min(n_lc, lc_cap)].copy(), collisions=col_log[: min(n_col, len(col_log))].copy(),
        n_lane_changes=int(n_lc), n_collisions=int(n_col),
        backend=backend or _backend.BACKEND,
    )


def vehicle_id(i: int) -> str:
    return f"V{i:04d}"


def default_scenario_id(trace: SimTrace) -> str:
    digest = canonical.sha256_hex(canonical.dumps({"config": trace.config.to_dict(),
                                                   "params": trace.params.to_dict()}))
    return f"sim-{digest[:16]}"


def trace_to_scenario(trace: SimTrace, scenario_id: Optional[str] = None,
                      creation_time: Optional[datetime] = None, area: str = "highway",
                      data_use_restrictions: str = "synthetic data; no restrictions",
                      world_epsg: int = 25832, local_origin: tuple[float, float] = (0.0, 0.0),
                      extra_events: Sequence[EventRecord] = (),
                      behavior_risk: Optional[dict] = None) -> Scenario:
    """Convert a trace into a sampled/synthetic Scenario.

    ``behavior_risk`` maps (frame index, vehicle index) to a name -> value
    dict attached to that state.
    """
    sid = scenario_id or default_scenario_id(trace)
    ids = [vehicle_id(i) for i in range(trace.n_vehicles)]
    road_id = trace.config.topology
    x, y, heading = trace.world_pose()
    participants = {}
    for i, pid in enumerate(ids):
        speeds = trace.v[:, i]
        participants[pid] = Participant(
            participant_id=pid,
            road_user_type=trace.classes[i],
            dimensions=Dimensions(float(trace.length[i]), float(trace.width[i]), float(trace.height[i])),
            speed_range=(float(speeds.min()), float(speeds.max())),
        )
    behavior_risk = behavior_risk or {}
    frames = []
    for k, t in enumerate(trace.times.tolist()):
        states = {}
        for i, pid in enumerate(ids):
            states[pid] = FrameState(
                bbox3d=BBox3D(center=(float(x[k, i]), float(y[k, i]), 0.5 * float(trace.height[i])),
                              extent=(float(trace.length[i]), float(trace.width[i]), float(trace.height[i])),
                              heading=float(heading[k, i])),
                world_position=(float(x[k, i]), float(y[k, i])),
                speed=float(trace.v[k, i]),
                lane_position=LanePosition(road_id, int(trace.lane[k, i]) + 1, float(trace.s[k, i]), 0.0),
                acceleration=float(trace.a[k, i]),
                behavior_risk=behavior_risk.get((k, i)),
            )
        frames.append(Frame(frame_id=k, timestamp=float(t), states=states))

    t0, t1 = float(trace.times[0]), float(trace.times[-1])
    events = list(extra_events)
    for j, row in enumerate(trace.lane_changes):
        t = min(float(row[0]), t1)
        vid = vehicle_id(int(row[1]))
        direction = "to_left" if row[3] > row[2] else "to_right"
        events.append(EventRecord(f"lc{j:05d}", (t, t), {vid: direction}, "lane_change"))
    for j, row in enumerate(trace.collisions):
        t = min(float(row[0]), t1)
        events.append(EventRecord(f"col{j:05d}", (t, t),
                                  {vehicle_id(int(row[1])): "follower", vehicle_id(int(row[2])): "leader"},
                                  "collision"))

    metadata = ScenarioMetadata(
        creation_time=creation_time or SIM_EPOCH,
        acquisition_method="synthetic",
        data_use_restrictions=data_use_restrictions,
        origin="sampled",
        area=area,
        scenario_duration=t1 - t0,
        dynamic_ranges={"speed": (float(trace.v.min()), float(trace.v.max())),
                        "acceleration": (float(trace.a.min()), float(trace.a.max()))},
    )
    coords = CoordinateSystemSet(world_epsg=world_epsg, local_origin=local_origin,
                                 systems={"local": CoordinateSystem("local", "local")})
    return Scenario(scenario_id=sid, context=Context(), participants=participants, events=tuple(events),
                    frames=tuple(frames), metadata=metadata, coordinate_systems=coords,
                    resources=ResourceLinks())
