"""Counter-based, splittable random streams.

Every draw comes from a Philox generator keyed by (seed, stream, index), so
a vehicle's desired speed depends only on the seed and the vehicle index,
never on iteration order or on how many other vehicles exist.
"""

from __future__ import annotations

import numpy as np

RNG_NAME = "philox-seedsequence"
RNG_VERSION = 1

STREAM_DESIRED_SPEED = 1
STREAM_PLACEMENT = 2
STREAM_DERIVED_SEED = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(RNG_VERSION,) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed derived from ``seed`` and a key path."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(RNG_VERSION, STREAM_DERIVED_SEED) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def truncated_normal(gen: np.random.Generator, mean: float, std: float, lo: float, hi: float,
                     max_tries: int = 10_000) -> float:
    """Rejection sample of N(mean, std) restricted to [lo, hi]."""
    for _ in range(max_tries):
        x = mean + std * gen.standard_normal()
        if lo <= x <= hi:
            return float(x)
    raise RuntimeError("truncated normal rejection sampling did not terminate")


def desired_speed(seed: int, vehicle: int, mean: float, std: float) -> float:
    """Desired speed of one vehicle, truncated to [0.5 mean, 1.5 mean]."""
    return truncated_normal(stream(seed, STREAM_DESIRED_SPEED, vehicle), mean, std, 0.5 * mean, 1.5 * mean)
