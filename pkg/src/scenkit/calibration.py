"""Maximum-likelihood calibration of the traffic model with Nelder-Mead.

Each objective evaluation sets the free parameters, runs ``n_sim_repeats``
simulations with seeds derived from the master seed (the same seeds for
every evaluation, i.e. common random numbers), extracts the observable per
vehicle class and scores the recorded sample against a density fit to the
simulated one. The objective is the log-likelihood summed over recorded
values and classes, averaged over repeats.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .kde import EmptySample, log_likelihood
from .model import Scenario
from .optimize import CalibrationResult, nelder_mead_restarts
from .sim import ModelParams, SimConfig, SimTrace, simulate
from .sim import rng
from .sim.params import VEHICLE_CLASSES, ConfigError

OBSERVABLES = ("speed", "gap", "thw")


@dataclass(frozen=True)
class ObjectiveSpec:
    observable: str = "speed"
    class_filter: Optional[str] = None
    free_params: tuple[str, ...] = ("car.mean", "car.std", "truck.mean", "truck.std")
    bounds: tuple[tuple[float, float], ...] = ((20.0, 45.0), (0.5, 6.0), (15.0, 35.0), (0.3, 5.0))
    sim_config: SimConfig = SimConfig()
    n_sim_repeats: int = 3
    estimator: str = "kde"
    warmup: float = 0.0
    tol: float = 1e-3
    max_evals: int = 400

    def __post_init__(self):
        object.__setattr__(self, "free_params", tuple(self.free_params))
        object.__setattr__(self, "bounds", tuple((float(a), float(b)) for a, b in self.bounds))

    def validate(self, params: Optional[ModelParams] = None) -> None:
        problems = []
        if self.observable not in OBSERVABLES:
            problems.append(f"observable must be one of {OBSERVABLES}")
        if self.class_filter is not None and self.class_filter not in VEHICLE_CLASSES:
            problems.append(f"class_filter must be one of {VEHICLE_CLASSES}")
        if not self.free_params:
            problems.append("free_params must be non-empty")
        if len(self.bounds) != len(self.free_params):
            problems.append("need exactly one bound pair per free parameter")
        for name, (lo, hi) in zip(self.free_params, self.bounds):
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                problems.append(f"bounds for {name} must be finite with lo < hi")
        if len(set(self.free_params)) != len(self.free_params):
            problems.append("free_params contains duplicates")
        probe = params or ModelParams()
        for name in self.free_params:
            try:
                probe.get(name)
            except KeyError:
                problems.append(f"unknown parameter {name!r}")
        if self.n_sim_repeats < 1:
            problems.append("n_sim_repeats must be >= 1")
        if self.estimator not in ("kde", "gaussian"):
            problems.append("estimator must be 'kde' or 'gaussian'")
        if problems:
            raise ConfigError("invalid objective spec: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "class_filter": self.class_filter,
            "free_params": list(self.free_params),
            "bounds": [list(b) for b in self.bounds],
            "sim_config": self.sim_config.to_dict(),
            "n_sim_repeats": self.n_sim_repeats,
            "estimator": self.estimator,
            "warmup": self.warmup,
            "tol": self.tol,
            "max_evals": self.max_evals,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ObjectiveSpec":
        kw = dict(d)
        if "sim_config" in kw:
            kw["sim_config"] = SimConfig.from_dict(kw["sim_config"])
        known = set(cls.__dataclass_fields__)
        unknown = set(kw) - known
        if unknown:
            raise ConfigError(f"unknown objective spec keys: {sorted(unknown)}")
        return cls(**kw)


def _from_trace(trace: SimTrace, observable: str, warmup: float) -> dict[str, np.ndarray]:
    fm = trace.frame_mask(warmup)
    if observable == "speed":
        values = trace.v[fm]
    else:
        gaps = trace.gaps()[fm]
        if observable == "gap":
            values = gaps
        else:
            v = trace.v[fm]
            with np.errstate(divide="ignore", invalid="ignore"):
                values = np.where(v > 0.0, gaps / v, np.nan)
    out = {}
    for cls in VEHICLE_CLASSES:
        cm = trace.class_mask(cls)
        col = values[:, cm].ravel()
        out[cls] = col[np.isfinite(col)]
    return out


def _from_scenario(s: Scenario, observable: str, warmup: float) -> dict[str, np.ndarray]:
    buckets: dict[str, list[float]] = {c: [] for c in VEHICLE_CLASSES}
    if not s.frames:
        return {c: np.empty(0) for c in VEHICLE_CLASSES}
    t0 = s.frames[0].timestamp
    for f in s.frames:
        if f.timestamp - t0 < warmup - 1e-9:
            continue
        lanes: dict[tuple, list[tuple[float, str]]] = {}
        if observable != "speed":
            for pid, st in f.states.items():
                if st.lane_position is not None:
                    lp = st.lane_position
                    lanes.setdefault((lp.road_id, lp.lane_id), []).append((lp.s, pid))
            for v in lanes.values():
                v.sort()
        for pid, st in f.states.items():
            cls = s.participants[pid].road_user_type
            if cls not in buckets:
                continue
            if observable == "speed":
                buckets[cls].append(st.speed)
                continue
            lp = st.lane_position
            if lp is None:
                continue
            row = lanes[(lp.road_id, lp.lane_id)]
            k = row.index((lp.s, pid))
            if k + 1 >= len(row):
                continue
            lead = row[k + 1][1]
            gap = row[k + 1][0] - lp.s - 0.5 * (st.bbox3d.extent[0] + f.states[lead].bbox3d.extent[0])
            if observable == "gap":
                buckets[cls].append(gap)
            elif st.speed > 0.0:
                buckets[cls].append(gap / st.speed)
    return {c: np.asarray(v, dtype=np.float64) for c, v in buckets.items()}


RecordedData = Union[Scenario, SimTrace, Mapping[str, Sequence[float]], Sequence[float], np.ndarray]


def extract_observable(data: RecordedData, observable: str = "speed", class_filter: Optional[str] = None,
                       warmup: float = 0.0) -> dict[str, np.ndarray]:
    """Observable samples keyed by vehicle class.

    A bare array is taken to be the sample of ``class_filter`` (or of all
    vehicles when no filter is set). Raises EmptySample if nothing remains.
    """
    if observable not in OBSERVABLES:
        raise ValueError(f"unknown observable {observable!r}")
    if isinstance(data, Scenario):
        per = _from_scenario(data, observable, warmup)
    elif isinstance(data, SimTrace):
        per = _from_trace(data, observable, warmup)
    elif isinstance(data, Mapping):
        per = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in data.items()}
    else:
        per = {class_filter or "all": np.asarray(data, dtype=np.float64).ravel()}
    if class_filter is not None:
        per = {k: v for k, v in per.items() if k == class_filter}
    per = {k: v for k, v in per.items() if v.size > 0}
    if not per:
        raise EmptySample(f"no {observable} values for class {class_filter or 'any'}")
    return per


def objective_value(recorded: dict[str, np.ndarray], traces: Sequence[SimTrace], spec: ObjectiveSpec) -> float:
    total = 0.0
    for trace in traces:
        sim = extract_observable(trace, spec.observable, None, spec.warmup)
        if "all" in recorded:
            sim = {"all": np.concatenate(list(sim.values()))}
        for cls, rec in recorded.items():
            if cls not in sim:
                raise EmptySample(f"simulation produced no {spec.observable} values for class {cls}")
            # per-frame values of one vehicle are strongly correlated: the bandwidth
            # rule counts vehicles, not frames
            n_eff = trace.n_vehicles if cls == "all" else int(trace.class_mask(cls).sum())
            total += log_likelihood(rec, sim[cls], estimator=spec.estimator, n_eff=n_eff)
    return total / len(traces)


def calibrate(spec: ObjectiveSpec, recorded: RecordedData, params0: ModelParams, seed: int = 0,
              threads: Optional[int] = None, x0: Optional[Sequence[float]] = None,
              callback=None) -> CalibrationResult:
    """Nelder-Mead maximization of the mean log-likelihood over repeats.

    The simplex is rebuilt around the best point whenever it collapses.

    ``x0`` defaults to the free parameters' values in ``params0``.
    """
    spec.validate(params0)
    rec = extract_observable(recorded, spec.observable, spec.class_filter, spec.warmup)
    seeds = [rng.derive_seed(seed, r) for r in range(spec.n_sim_repeats)]
    names = spec.free_params
    start = np.array([params0.get(n) for n in names] if x0 is None else x0, dtype=np.float64)

    pool = ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None

    def run(p, sd):
        return simulate(replace(spec.sim_config, seed=sd), p)

    def f(x):
        p = params0.with_values(names, x)
        try:
            p.validate()
        except ConfigError:
            return -math.inf
        if pool is not None:
            traces = list(pool.map(lambda sd: run(p, sd), seeds))
        else:
            traces = [run(p, sd) for sd in seeds]
        return objective_value(rec, traces, spec)

    try:
        res = nelder_mead_restarts(f, start, spec.bounds, tol=spec.tol, max_evals=spec.max_evals, callback=callback)
    finally:
        if pool is not None:
            pool.shutdown()
    res.param_names = tuple(names)
    return res
