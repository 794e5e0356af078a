"""Deterministic seeded microscopic traffic simulation."""

from ._backend import BACKEND, KERNELS
from .core import SIM_EPOCH, SimTrace, required_deceleration, simulate, trace_to_scenario, vehicle_id
from .params import ConfigError, LaneChangeParams, ModelParams, SimConfig, VehicleInit

__all__ = [
    "BACKEND",
    "KERNELS",
    "ConfigError",
    "LaneChangeParams",
    "ModelParams",
    "SIM_EPOCH",
    "SimConfig",
    "SimTrace",
    "VehicleInit",
    "required_deceleration",
    "simulate",
    "trace_to_scenario",
    "vehicle_id",
]
