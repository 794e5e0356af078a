"""Frame-discrete time-space risk measures: THW, DHW, TTC, gTTC and PrET.

gTTC is the first time the two footprint rectangles overlap when both
participants keep their velocity and heading. PrET is |t1 - t2| for the
times at which each reference point reaches the crossing of the two
straight-line paths. Absent (``None``) means "undefined in this geometry".
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

from .model import (
    LanePosition,
    RISK_KEYS,
    FrameState,
    RiskMeasureSet,
    Scenario,
    observed_range,
    validate_scenario,
    with_dynamic_ranges,
)
from .openlabel import ValidationError

DEFAULT_HORIZON = 20.0
# contact tolerance in metres; lets point footprints register a coincidence
CONTACT_SLACK = 1e-9
PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class Body:
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    length: float = 0.0
    width: float = 0.0
    lane: Optional[LanePosition] = None

    def __post_init__(self):
        if self.length < 0.0 or self.width < 0.0:
            raise ValueError("footprint dimensions must be non-negative")

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @classmethod
    def from_state(cls, st: FrameState) -> "Body":
        h = st.bbox3d.heading
        return cls(st.world_position[0], st.world_position[1], st.speed * math.cos(h),
                   st.speed * math.sin(h), h, st.bbox3d.extent[0], st.bbox3d.extent[1],
                   st.lane_position)

    def scaled(self, k: float) -> "Body":
        return replace(self, vx=self.vx * k, vy=self.vy * k)


@dataclass(frozen=True)
class KinematicPair:
    ego: Body
    target: Body


def _axes(h: float) -> tuple[tuple[float, float], tuple[float, float]]:
    c, s = math.cos(h), math.sin(h)
    return (c, s), (-s, c)


def following_gap(pair: KinematicPair) -> Optional[float]:
    """Bumper-to-bumper gap if the target leads the ego, else None.

    Uses lane coordinates when both carry them; otherwise the target must be
    ahead along the ego heading with lateral offset below the half-width sum.
    """
    e, t = pair.ego, pair.target
    half_len = 0.5 * (e.length + t.length)
    if e.lane is not None and t.lane is not None:
        if (e.lane.road_id, e.lane.lane_id) != (t.lane.road_id, t.lane.lane_id):
            return None
        if not t.lane.s > e.lane.s:
            return None
        return max(0.0, t.lane.s - e.lane.s - half_len)
    (ux, uy), (nx, ny) = _axes(e.heading)
    dx, dy = t.x - e.x, t.y - e.y
    lon = dx * ux + dy * uy
    lat = dx * nx + dy * ny
    if not lon > 0.0:
        return None
    if abs(lat) > 0.5 * (e.width + t.width) + CONTACT_SLACK:
        return None
    return max(0.0, lon - half_len)


def dhw(pair: KinematicPair) -> Optional[float]:
    return following_gap(pair)


def thw(pair: KinematicPair) -> Optional[float]:
    gap = following_gap(pair)
    v = pair.ego.speed
    if gap is None or not v > 0.0:
        return None
    return gap / v


def ttc(pair: KinematicPair) -> Optional[float]:
    gap = following_gap(pair)
    if gap is None:
        return None
    (ux, uy), _ = _axes(pair.ego.heading)
    ve = pair.ego.vx * ux + pair.ego.vy * uy
    vt = pair.target.vx * ux + pair.target.vy * uy
    closing = ve - vt
    if not closing > 0.0:
        return None
    return gap / closing


def gttc(pair: KinematicPair, horizon: float = DEFAULT_HORIZON, mode: str = "footprint") -> Optional[float]:
    """Earliest t in [0, horizon] at which the footprints overlap.

    Closed form: in the ego frame the target translates with the relative
    velocity, so on each of the four separating axes the overlap condition
    |c0 + w t| <= R is a time interval. The footprints overlap exactly when
    all four intervals do.
    """
    if mode not in ("footprint", "point"):
        raise ValueError(f"unknown gttc mode {mode!r}")
    e, t = pair.ego, pair.target
    el, ew = (e.length, e.width) if mode == "footprint" else (0.0, 0.0)
    tl, tw = (t.length, t.width) if mode == "footprint" else (0.0, 0.0)
    ue, ne = _axes(e.heading)
    ut, nt = _axes(t.heading)
    cx, cy = t.x - e.x, t.y - e.y
    wx, wy = t.vx - e.vx, t.vy - e.vy
    lo, hi = 0.0, horizon
    for ax, ay in (ue, ne, ut, nt):
        r_e = 0.5 * el * abs(ue[0] * ax + ue[1] * ay) + 0.5 * ew * abs(ne[0] * ax + ne[1] * ay)
        r_t = 0.5 * tl * abs(ut[0] * ax + ut[1] * ay) + 0.5 * tw * abs(nt[0] * ax + nt[1] * ay)
        r = r_e + r_t + CONTACT_SLACK
        c = cx * ax + cy * ay
        w = wx * ax + wy * ay
        if w == 0.0:
            if abs(c) > r:
                return None
            continue
        t1 = (-r - c) / w
        t2 = (r - c) / w
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > lo:
            lo = t1
        if t2 < hi:
            hi = t2
        if lo > hi:
            return None
    return lo


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def crossing_times(pair: KinematicPair) -> Optional[tuple[float, float]]:
    """Times (t1, t2) at which ego and target reference points reach the path crossing.

    Written so that swapping ego and target swaps t1 and t2 bit-exactly.
    """
    e, t = pair.ego, pair.target
    det = _cross(e.vx, e.vy, t.vx, t.vy)
    if det == 0.0 or abs(det) <= PARALLEL_EPS * e.speed * t.speed:
        return None
    dx, dy = t.x - e.x, t.y - e.y
    t1 = _cross(dx, dy, t.vx, t.vy) / det
    t2 = _cross(dx, dy, e.vx, e.vy) / det
    return t1, t2


def _cover_interval(b: Body, px: float, py: float) -> Optional[tuple[float, float]]:
    """Times during which body b's footprint covers the fixed point (px, py)."""
    lo, hi = -math.inf, math.inf
    u, n = _axes(b.heading)
    for (ax, ay), r in ((u, 0.5 * b.length), (n, 0.5 * b.width)):
        r += CONTACT_SLACK
        c = (b.x - px) * ax + (b.y - py) * ay
        w = b.vx * ax + b.vy * ay
        if w == 0.0:
            if abs(c) > r:
                return None
            continue
        t1, t2 = (-r - c) / w, (r - c) / w
        if t1 > t2:
            t1, t2 = t2, t1
        lo, hi = max(lo, t1), min(hi, t2)
    if lo > hi:
        return None
    return lo, hi


def pret(pair: KinematicPair, mode: str = "point") -> Optional[float]:
    """Predicted encroachment time at the crossing of the two paths."""
    if mode not in ("point", "footprint"):
        raise ValueError(f"unknown pret mode {mode!r}")
    ct = crossing_times(pair)
    if ct is None:
        return None
    t1, t2 = ct
    if mode == "point":
        if t1 < 0.0 or t2 < 0.0:
            return None
        return abs(t1 - t2)
    e = pair.ego
    px, py = e.x + e.vx * t1, e.y + e.vy * t1
    a = _cover_interval(pair.ego, px, py)
    b = _cover_interval(pair.target, px, py)
    if a is None or b is None or a[1] < 0.0 or b[1] < 0.0:
        return None
    return max(0.0, max(a[0], b[0]) - min(a[1], b[1]))


def risk_measures(pair: KinematicPair, horizon: float = DEFAULT_HORIZON,
                  gttc_mode: str = "footprint", pret_mode: str = "point") -> RiskMeasureSet:
    return RiskMeasureSet(
        thw=thw(pair),
        dhw=dhw(pair),
        ttc=ttc(pair),
        gttc=gttc(pair, horizon, gttc_mode),
        pret=pret(pair, pret_mode),
    )


def _annotate_frame(frame, horizon, gttc_mode, pret_mode):
    hidden = set()
    if frame.unobserved_areas:
        from shapely.geometry import Point, Polygon
        from shapely.prepared import prep

        polys = [prep(Polygon(p)) for p in frame.unobserved_areas]
        for pid, st in frame.states.items():
            pt = Point(st.world_position)
            if any(p.covers(pt) for p in polys):
                hidden.add(pid)
    bodies = {pid: Body.from_state(st) for pid, st in frame.states.items()}
    states = {}
    for pid, st in frame.states.items():
        risks = {}
        if pid not in hidden:
            for tid, tb in bodies.items():
                if tid == pid or tid in hidden:
                    continue
                risks[tid] = risk_measures(KinematicPair(bodies[pid], tb), horizon, gttc_mode, pret_mode)
        states[pid] = replace(st, pairwise_risk=risks)
    return replace(frame, states=states)


def annotate_scenario(s: Scenario, horizon: float = DEFAULT_HORIZON, gttc_mode: str = "footprint",
                      pret_mode: str = "point", threads: Optional[int] = None) -> Scenario:
    """Copy of ``s`` with pairwise_risk recomputed for every ordered pair in every frame.

    Pairs involving a participant inside an unobserved area get no entry.
    dynamic_ranges for the risk keys are reset to the new observed ranges so
    the result still satisfies the metadata invariants.
    """
    rep = validate_scenario(s)
    if not rep.ok:
        raise ValidationError(rep)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(lambda f: _annotate_frame(f, horizon, gttc_mode, pret_mode), s.frames))
    else:
        frames = [_annotate_frame(f, horizon, gttc_mode, pret_mode) for f in s.frames]
    out = replace(s, frames=tuple(frames))
    ranges = {}
    for key in RISK_KEYS:
        ranges[key] = observed_range(
            getattr(rm, key)
            for f in frames for st in f.states.values() for rm in st.pairwise_risk.values()
            if getattr(rm, key) is not None
        )
    return with_dynamic_ranges(out, ranges)
