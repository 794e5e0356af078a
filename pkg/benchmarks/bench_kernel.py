"""Time the compiled and pure-Python simulation kernels on the same runs.

    python benchmarks/bench_kernel.py --vehicles 50 200 --duration 60

Each backend runs every configuration ``--repeats`` times; the best wall
time is reported together with the speedup and a bit-identity check.
"""

import argparse
import time

import numpy as np

from scenkit.sim import KERNELS, ModelParams, SimConfig, simulate


def best_time(cfg, params, backend, repeats):
    best, trace = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        trace = simulate(cfg, params, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vehicles", type=int, nargs="+", default=[25, 100, 200])
    ap.add_argument("--duration", type=float, default=60.0, help="simulated seconds per run")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in KERNELS:
        print("compiled kernel not built; reinstall without SCENKIT_NO_EXT to compare")
        return 1
    params = ModelParams()
    print(f"{'vehicles':>8} {'steps':>6} {'python s':>10} {'cython s':>10} {'speedup':>8} identical")
    for n in args.vehicles:
        n_truck = n // 5
        cfg = SimConfig(n_vehicles={"car": n - n_truck, "truck": n_truck}, road_length=max(1000.0, 25.0 * n),
                        duration=args.duration, seed=args.seed, record_interval=1.0)
        t_py, a = best_time(cfg, params, "python", args.repeats)
        t_c, b = best_time(cfg, params, "cython", args.repeats)
        same = all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("lane", "s", "v", "a"))
        print(f"{n:>8} {cfg.n_steps:>6} {t_py:>10.3f} {t_c:>10.4f} {t_py / t_c:>7.0f}x {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
