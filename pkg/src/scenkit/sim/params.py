"""Model parameters and simulation configuration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

VEHICLE_CLASSES = ("car", "truck")

# footprint (length, width, height) per class, metres
DEFAULT_DIMENSIONS = {"car": (4.5, 1.8, 1.5), "truck": (12.0, 2.55, 3.8)}
LANE_WIDTH = 3.5
LANE_CHANGE_COOLDOWN = 5.0
LANE_CHANGE_LOOKAHEAD = 100.0

W99_NAMES = ("cc0", "cc1", "cc2", "cc3", "cc4", "cc5", "cc6", "cc7", "cc8", "cc9")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LaneChangeParams:
    min_gap_lead: float = 2.0
    min_gap_lag: float = 5.0
    speed_advantage_threshold: float = 2.0


@dataclass(frozen=True)
class ModelParams:
    # Wiedemann-99 constants; cc6 in the usual 10^-4 scaled units
    cc0: float = 1.5
    cc1: float = 0.9
    cc2: float = 4.0
    cc3: float = -8.0
    cc4: float = -0.35
    cc5: float = 0.35
    cc6: float = 11.44
    cc7: float = 0.25
    cc8: float = 3.5
    cc9: float = 1.5
    desired_speed: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"car": (33.0, 2.0), "truck": (24.0, 1.5)})
    max_decel: Mapping[str, float] = field(default_factory=lambda: {"car": 7.0, "truck": 5.0})
    lane_change: LaneChangeParams = LaneChangeParams()

    def __post_init__(self):
        object.__setattr__(self, "desired_speed",
                           {k: (float(v[0]), float(v[1])) for k, v in self.desired_speed.items()})
        object.__setattr__(self, "max_decel", {k: float(v) for k, v in self.max_decel.items()})

    def validate(self) -> None:
        problems = []
        for name in W99_NAMES:
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if not self.cc0 > 0.0:
            problems.append("cc0 must be > 0")
        if not self.cc1 > 0.0:
            problems.append("cc1 must be > 0")
        for cls in VEHICLE_CLASSES:
            if cls not in self.desired_speed:
                problems.append(f"desired_speed missing class {cls!r}")
            else:
                mean, std = self.desired_speed[cls]
                if not (math.isfinite(mean) and mean > 0.0):
                    problems.append(f"desired_speed.{cls} mean must be > 0")
                if not (math.isfinite(std) and std > 0.0):
                    problems.append(f"desired_speed.{cls} std must be > 0")
            if not self.max_decel.get(cls, 0.0) > 0.0:
                problems.append(f"max_decel.{cls} must be > 0")
        lc = self.lane_change
        if lc.min_gap_lead < self.cc0 or lc.min_gap_lag < self.cc0:
            problems.append("lane-change minimum gaps must be >= cc0")
        if problems:
            raise ConfigError("invalid model parameters: " + "; ".join(problems))

    def w99_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in W99_NAMES], dtype=np.float64)

    # flat names used by calibration: "cc1", "car.mean", "truck.std", "max_decel.car", ...
    def get(self, name: str) -> float:
        head, _, tail = name.partition(".")
        if not tail:
            if name in W99_NAMES:
                return float(getattr(self, name))
        elif head in self.desired_speed and tail in ("mean", "std"):
            return self.desired_speed[head][0 if tail == "mean" else 1]
        elif head == "max_decel" and tail in self.max_decel:
            return self.max_decel[tail]
        elif head == "lane_change" and hasattr(self.lane_change, tail):
            return float(getattr(self.lane_change, tail))
        raise KeyError(f"unknown parameter name {name!r}")

    def with_values(self, names: Sequence[str], values: Sequence[float]) -> "ModelParams":
        p = self
        for name, value in zip(names, values):
            p.get(name)  # raises on unknown names
            value = float(value)
            head, _, tail = name.partition(".")
            if not tail:
                p = replace(p, **{name: value})
            elif head in p.desired_speed:
                mean, std = p.desired_speed[head]
                ds = dict(p.desired_speed)
                ds[head] = (value, std) if tail == "mean" else (mean, value)
                p = replace(p, desired_speed=ds)
            elif head == "max_decel":
                md = dict(p.max_decel)
                md[tail] = value
                p = replace(p, max_decel=md)
            else:
                p = replace(p, lane_change=replace(p.lane_change, **{tail: value}))
        return p

    def to_dict(self) -> dict:
        d = {n: getattr(self, n) for n in W99_NAMES}
        d["desired_speed"] = {k: {"mean": v[0], "std": v[1]} for k, v in self.desired_speed.items()}
        d["max_decel"] = dict(self.max_decel)
        d["lane_change"] = asdict(self.lane_change)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelParams":
        base = cls()
        kw: dict[str, Any] = {n: float(d[n]) for n in W99_NAMES if n in d}
        if "desired_speed" in d:
            ds = dict(base.desired_speed)
            for k, v in d["desired_speed"].items():
                ds[k] = (float(v["mean"]), float(v["std"])) if isinstance(v, Mapping) else (float(v[0]), float(v[1]))
            kw["desired_speed"] = ds
        if "max_decel" in d:
            md = dict(base.max_decel)
            md.update({k: float(v) for k, v in d["max_decel"].items()})
            kw["max_decel"] = md
        if "lane_change" in d:
            kw["lane_change"] = replace(base.lane_change, **{k: float(v) for k, v in d["lane_change"].items()})
        unknown = set(d) - set(W99_NAMES) - {"desired_speed", "max_decel", "lane_change"}
        if unknown:
            raise ConfigError(f"unknown model parameter keys: {sorted(unknown)}")
        return cls(**kw)


@dataclass(frozen=True)
class VehicleInit:
    """Explicit initial state of one vehicle; desired speed drawn if omitted."""

    vehicle_class: str
    lane: int
    s: float
    speed: float
    desired_speed: Optional[float] = None


@dataclass(frozen=True)
class SimConfig:
    n_lanes: int = 3
    road_length: float = 2000.0
    topology: str = "ring"  # "ring" | "open"
    n_vehicles: Mapping[str, int] = field(default_factory=lambda: {"car": 20, "truck": 5})
    dt: float = 0.05
    duration: float = 60.0
    seed: int = 0
    record_interval: float = 0.1
    lane_changes: bool = True
    # start speed as a fraction of each vehicle's desired speed (ring placement only)
    initial_speed_factor: float = 0.5
    initial: Optional[tuple[VehicleInit, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "n_vehicles", {k: int(v) for k, v in self.n_vehicles.items()})
        if self.initial is not None:
            object.__setattr__(self, "initial", tuple(self.initial))

    def validate(self) -> None:
        problems = []
        if not (0.0 < self.dt <= 0.5):
            problems.append("dt must lie in (0, 0.5]")
        if not self.duration > 0.0:
            problems.append("duration must be > 0")
        if self.n_lanes < 1:
            problems.append("n_lanes must be >= 1")
        if not self.road_length > 0.0:
            problems.append("road_length must be > 0")
        if self.topology not in ("ring", "open"):
            problems.append("topology must be 'ring' or 'open'")
        if self.record_interval < self.dt - 1e-12:
            problems.append("record_interval must be >= dt")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must be a 64-bit unsigned integer")
        for k, v in self.n_vehicles.items():
            if k not in VEHICLE_CLASSES:
                problems.append(f"unknown vehicle class {k!r}")
            if v < 0:
                problems.append(f"n_vehicles.{k} must be >= 0")
        if self.initial is not None:
            for i, vi in enumerate(self.initial):
                if vi.vehicle_class not in VEHICLE_CLASSES:
                    problems.append(f"initial[{i}]: unknown class {vi.vehicle_class!r}")
                if not 0 <= vi.lane < self.n_lanes:
                    problems.append(f"initial[{i}]: lane out of range")
                if vi.speed < 0.0:
                    problems.append(f"initial[{i}]: speed must be >= 0")
        if problems:
            raise ConfigError("invalid simulation config: " + "; ".join(problems))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def record_every(self) -> int:
        return max(1, int(round(self.record_interval / self.dt)))

    def to_dict(self) -> dict:
        d = {
            "n_lanes": self.n_lanes,
            "road_length": self.road_length,
            "topology": self.topology,
            "n_vehicles": dict(self.n_vehicles),
            "dt": self.dt,
            "duration": self.duration,
            "seed": self.seed,
            "record_interval": self.record_interval,
            "lane_changes": self.lane_changes,
            "initial_speed_factor": self.initial_speed_factor,
        }
        if self.initial is not None:
            d["initial"] = [{k: v for k, v in asdict(vi).items() if v is not None} for vi in self.initial]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        known = {"n_lanes", "road_length", "topology", "n_vehicles", "dt", "duration", "seed",
                 "record_interval", "lane_changes", "initial_speed_factor", "initial"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation config keys: {sorted(unknown)}")
        kw = dict(d)
        if "initial" in kw and kw["initial"] is not None:
            kw["initial"] = tuple(VehicleInit(**vi) for vi in kw["initial"])
        for key in ("road_length", "dt", "duration", "record_interval", "initial_speed_factor"):
            if key in kw:
                kw[key] = float(kw[key])
        for key in ("n_lanes", "seed"):
            if key in kw:
                kw[key] = int(kw[key])
        return cls(**kw)
