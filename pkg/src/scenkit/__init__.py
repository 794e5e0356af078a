"""Traffic scenario toolkit: an OpenLABEL-style scenario format, a file-backed
scenario store, surrogate safety metrics, a Wiedemann-99 traffic simulator
with likelihood-based calibration, and cut-in criticality sampling."""

from .model import Scenario, ValidationReport, validate_scenario
from .openlabel import parse, serialize
from .sim import BACKEND, ModelParams, SimConfig, simulate, trace_to_scenario
from .store import QueryFilter, ScenarioStore

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ModelParams",
    "QueryFilter",
    "Scenario",
    "ScenarioStore",
    "SimConfig",
    "ValidationReport",
    "parse",
    "serialize",
    "simulate",
    "trace_to_scenario",
    "validate_scenario",
]
