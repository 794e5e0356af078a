"""Command-line interface.

Machine-readable output goes to stdout as canonical JSON (one document,
or one line per record for ``ingest`` and ``query``); messages go to
stderr. Exit codes: 0 success, 1 validation errors, 2 usage error, 3 I/O
error, 4 computation error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import canonical
from .calibration import ObjectiveSpec, calibrate
from .kde import EmptySample
from .metrics import DEFAULT_HORIZON, annotate_scenario
from .model import RISK_KEYS, ValidationReport
from .openlabel import ProfileError, parse, parse_unchecked, serialize
from .optimize import CalibrationResult
from .sampler import MissingStates, NoSuchEvent, VariationSpec, emit_samples, outcomes_csv, sweep
from .sim import ModelParams, SimConfig, simulate, trace_to_scenario
from .sim.params import ConfigError
from .store import DuplicateId, NotFound, QueryFilter, ScenarioStore, StoreError, ValidationFailed

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_COMPUTE = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit_bytes(data: bytes) -> None:
    sys.stdout.flush()
    sys.stdout.buffer.write(data)
    sys.stdout.buffer.flush()


def _emit(obj) -> None:
    _emit_bytes(canonical.dumps(obj))


def _emit_line(obj) -> None:
    _emit_bytes((canonical.dumps_line(obj) + "\n").encode("utf-8"))


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _read_json(path: str) -> dict:
    try:
        doc = json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_USAGE, f"{path}: expected a JSON object")
    return doc


def _write(path: str, data: bytes) -> None:
    try:
        canonical.write_atomic(Path(path), data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _store(path: str, create: bool = False) -> ScenarioStore:
    root = Path(path)
    if not create and not root.is_dir():
        raise CliError(EXIT_IO, f"store {path} does not exist")
    try:
        return ScenarioStore(root)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot open store {path}: {exc.strerror or exc}") from None


def _fetch(store: ScenarioStore, sid: str):
    try:
        return store.fetch(sid)
    except NotFound:
        raise CliError(EXIT_IO, f"no scenario {sid!r} in the store") from None
    except StoreError as exc:
        raise CliError(EXIT_IO, str(exc)) from None


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not lo <= hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _quantity_range(text: str) -> tuple[str, tuple[float, float]]:
    name, sep, rest = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected quantity:lo:hi, got {text!r}")
    return name, _range(rest)


# -- subcommands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    data = _read_bytes(args.file)
    s, rep = parse_unchecked(data)
    out = {"file": args.file, "ok": rep.ok}
    if s is not None:
        out["scenario_id"] = s.scenario_id
    out.update(rep.to_dict())
    _emit(out)
    _say(f"{args.file}: {'valid' if rep.ok else rep.summary()}")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_ingest(args) -> int:
    store = _store(args.store, create=True)
    code = EXIT_OK
    for path in args.files:
        data = _read_bytes(path)
        try:
            sid = store.ingest(data)
        except ValidationFailed as exc:
            _emit_line({"file": path, "ok": False, **exc.report.to_dict()})
            _say(f"{path}: rejected: {exc}")
            code = EXIT_INVALID
            continue
        except DuplicateId as exc:
            rep = ValidationReport()
            rep.error("$.openlabel.metadata.scenario_id", f"duplicate scenario id {exc}")
            _emit_line({"file": path, "ok": False, **rep.to_dict()})
            _say(f"{path}: scenario id {exc} already stored")
            code = EXIT_INVALID
            continue
        _emit_line({"file": path, "ok": True, "scenario_id": sid})
    return code


def _risk_summary(s) -> dict:
    dr = s.metadata.dynamic_ranges
    return {k: list(dr[k]) for k in RISK_KEYS if k in dr}


def cmd_metrics(args) -> int:
    store = _store(args.store)
    s = _fetch(store, args.id)
    annotated = annotate_scenario(s, horizon=args.horizon, gttc_mode=args.gttc_mode, pret_mode=args.pret_mode,
                                  threads=args.threads)
    if args.write:
        store.update(annotated)
        _say(f"updated {args.id}")
    n_pairs = sum(len(st.pairwise_risk) for f in annotated.frames for st in f.states.values())
    _emit({"scenario_id": args.id, "horizon": args.horizon, "pair_states": n_pairs,
           "risk_ranges": _risk_summary(annotated), "written": bool(args.write)})
    return EXIT_OK


def cmd_query(args) -> int:
    store = _store(args.store)
    f = QueryFilter(
        areas=frozenset(args.area) if args.area else None,
        acquisition_methods=frozenset(args.method) if args.method else None,
        origins=frozenset(args.origin) if args.origin else None,
        event_types=frozenset(args.event) if args.event else None,
        duration=args.duration,
        dynamic_ranges=dict(args.range or ()),
        text=args.text,
    )
    hits = store.query(f)
    for sid, md in hits:
        _emit_line({"scenario_id": sid, "metadata": md})
    _say(f"{len(hits)} matching scenario(s)")
    return EXIT_OK


def _sim_inputs(doc: dict) -> tuple[SimConfig, ModelParams, dict]:
    extra = {k: doc[k] for k in ("scenario_id", "area", "data_use_restrictions") if k in doc}
    unknown = set(doc) - {"config", "params", "scenario_id", "area", "data_use_restrictions"}
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    cfg = SimConfig.from_dict(doc.get("config", {}))
    params = ModelParams.from_dict(doc.get("params", {}))
    cfg.validate()
    params.validate()
    return cfg, params, extra


def cmd_simulate(args) -> int:
    doc = _read_json(args.config)
    try:
        cfg, params, extra = _sim_inputs(doc)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (ConfigError, TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"{args.config}: {exc}") from None
    try:
        trace = simulate(cfg, params)
    except ConfigError as exc:
        raise CliError(EXIT_COMPUTE, str(exc)) from None
    s = trace_to_scenario(trace, **extra)
    data = serialize(s)
    _write(args.out, data)
    _emit({"scenario_id": s.scenario_id, "out": args.out, "sha256": canonical.sha256_hex(data),
           "frames": len(s.frames), "lane_changes": trace.n_lane_changes, "collisions": trace.n_collisions})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    doc = _read_json(args.spec)
    try:
        params0 = ModelParams.from_dict(doc.pop("params0", {}))
        seed = int(doc.pop("seed", 0))
        spec = ObjectiveSpec.from_dict(doc)
        if "sim_config" in doc:
            spec.sim_config.validate()
        spec.validate(params0)
    except (ConfigError, TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"{args.spec}: {exc}") from None
    if args.seed is not None:
        seed = args.seed
    if Path(args.data).is_file():
        try:
            recorded = parse(_read_bytes(args.data))
        except ProfileError as exc:
            raise CliError(EXIT_INVALID, f"{args.data}: {exc}") from None
    elif args.store:
        recorded = _fetch(_store(args.store), args.data)
    else:
        raise CliError(EXIT_IO, f"{args.data} is not a file; pass --store to read it from a store")

    def progress(it, x, v):
        if it % 10 == 0:
            _say(f"iteration {it}: best {v:.6g} at {np.array2string(np.asarray(x), precision=4)}")

    try:
        res: CalibrationResult = calibrate(spec, recorded, params0, seed=seed, threads=args.threads,
                                           callback=None if args.quiet else progress)
    except (EmptySample, ConfigError) as exc:
        raise CliError(EXIT_COMPUTE, str(exc)) from None
    report = {"spec": spec.to_dict(), "seed": seed, "params0": params0.to_dict(),
              "data": args.data, "result": res.to_dict()}
    if not math.isfinite(res.best_loglik):
        report["result"]["best_loglik"] = None
    data = canonical.dumps(report)
    _write(args.out, data)
    _emit_bytes(data)
    _say(f"{res.message}; {res.n_evals} evaluations")
    return EXIT_OK


def cmd_sample(args) -> int:
    store = _store(args.store)
    doc = _read_json(args.spec)
    if "base_scenario_id" not in doc:
        raise CliError(EXIT_USAGE, f"{args.spec}: base_scenario_id is required")
    base = _fetch(store, doc["base_scenario_id"])
    try:
        spec = VariationSpec.from_dict(doc, base)
        spec.validate()
    except (ConfigError, TypeError, ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"{args.spec}: {exc}") from None
    try:
        outcomes = sweep(spec, base, threads=args.threads)
    except (NoSuchEvent, MissingStates, ConfigError) as exc:
        raise CliError(EXIT_COMPUTE, str(exc)) from None
    names = [v.parameter for v in spec.varied]
    if args.report:
        _write(args.report, outcomes_csv(outcomes, names).encode("utf-8"))
    known = set(store.ids())
    emitted = []
    for s in emit_samples(outcomes, args.threshold, spec):
        if s.scenario_id in known:
            _say(f"{s.scenario_id} already stored; kept")
        else:
            store.ingest_scenario(s)
        emitted.append(s.scenario_id)
    rows = []
    for o in outcomes:
        r = o.row(names)
        r["a_req"] = canonical.finite_or_none(o.a_req)
        rows.append(r)
    _emit({"base_scenario_id": spec.base_scenario_id, "threshold": canonical.finite_or_none(args.threshold),
           "outcomes": rows, "emitted": emitted})
    _say(f"{len(outcomes)} grid points, {sum(o.crashed for o in outcomes)} crashed, {len(emitted)} emitted")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenkit", description="Traffic scenario database and simulation tools.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check one scenario file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("ingest", help="add scenario files to a store")
    i.add_argument("--store", required=True)
    i.add_argument("files", nargs="+")
    i.set_defaults(func=cmd_ingest)

    m = sub.add_parser("metrics", help="compute pairwise risk measures for a stored scenario")
    m.add_argument("--store", required=True)
    m.add_argument("--id", required=True)
    m.add_argument("--horizon", type=float, default=DEFAULT_HORIZON)
    m.add_argument("--gttc-mode", choices=("footprint", "point"), default="footprint")
    m.add_argument("--pret-mode", choices=("point", "footprint"), default="point")
    m.add_argument("--write", action="store_true", help="store the annotated scenario")
    m.add_argument("--threads", type=int, default=None)
    m.set_defaults(func=cmd_metrics)

    q = sub.add_parser("query", help="list stored scenarios matching all given filters")
    q.add_argument("--store", required=True)
    q.add_argument("--area", action="append", choices=("urban", "highway", "rural"))
    q.add_argument("--method", action="append")
    q.add_argument("--origin", action="append", choices=("reconstructed", "sampled", "original"))
    q.add_argument("--event", action="append")
    q.add_argument("--duration", type=_range, metavar="LO:HI")
    q.add_argument("--range", action="append", type=_quantity_range, metavar="QUANTITY:LO:HI")
    q.add_argument("--text", help="substring of the data use restrictions")
    q.set_defaults(func=cmd_query)

    s = sub.add_parser("simulate", help="run the traffic model and write a scenario")
    s.add_argument("--config", required=True, help="JSON with config, params and optional scenario_id/area")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides config.seed")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="fit model parameters to recorded data")
    c.add_argument("--spec", required=True)
    c.add_argument("--data", required=True, help="scenario file, or a scenario id with --store")
    c.add_argument("--store")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--threads", type=int, default=None)
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("sample", help="vary a recorded cut-in and store critical variations")
    a.add_argument("--spec", required=True)
    a.add_argument("--store", required=True)
    a.add_argument("--threshold", type=float, default=0.0, help="minimum a_req to emit, m/s^2")
    a.add_argument("--report", help="CSV report path")
    a.add_argument("--threads", type=int, default=None)
    a.set_defaults(func=cmd_sample)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        _say("--threads must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        _say(f"error: {exc}")
        return exc.code
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except StoreError as exc:
        _say(f"error: {exc}")
        return EXIT_IO
    except OSError as exc:
        _say(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
