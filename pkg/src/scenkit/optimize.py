"""Bounded Nelder-Mead simplex search (maximization)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ALPHA = 1.0  # reflection
GAMMA = 2.0  # expansion
RHO = 0.5  # contraction
SIGMA = 0.5  # shrink
INITIAL_STEP = 0.05
ZERO_STEP = 0.00025


@dataclass
class CalibrationResult:
    best_params: np.ndarray
    best_loglik: float
    n_evals: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    param_names: tuple[str, ...] = ()
    n_iterations: int = 0
    message: str = ""

    def to_dict(self) -> dict:
        d = {
            "best_params": [float(x) for x in self.best_params],
            "best_loglik": float(self.best_loglik),
            "n_evals": int(self.n_evals),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "trace": [float(x) for x in self.trace],
            "message": self.message,
        }
        if self.param_names:
            d["param_names"] = list(self.param_names)
            d["best"] = {n: float(x) for n, x in zip(self.param_names, self.best_params)}
        return d


class MaxEvalsExceeded(RuntimeError):
    """Raised internally when the evaluation budget is spent."""


def nelder_mead(f: Callable[[np.ndarray], float], x0: Sequence[float],
                bounds: Optional[Sequence[tuple[float, float]]] = None, tol: float = 1e-3,
                max_evals: int = 400, callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
                xtol: float = 0.0, step: float = INITIAL_STEP,
                ) -> CalibrationResult:
    """Maximize ``f`` from ``x0``; trial points are projected into ``bounds``.

    Stops when the spread of the simplex values drops below ``tol``, or
    when every vertex lies within ``xtol`` (relative, per coordinate) of
    the best one. The second case counts as collapsed, not converged. When
    the budget runs out the best point so far is returned with
    ``converged=False``.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    dim = x0.size
    if dim < 1:
        raise ValueError("need at least one free parameter")
    if bounds is None:
        lo = np.full(dim, -np.inf)
        hi = np.full(dim, np.inf)
    else:
        b = np.asarray(bounds, dtype=np.float64)
        if b.shape != (dim, 2):
            raise ValueError("bounds must be one (lo, hi) pair per parameter")
        lo, hi = b[:, 0], b[:, 1]
        if np.any(lo >= hi):
            raise ValueError("bounds need lo < hi")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("x0 lies outside the bounds")

    n_evals = 0
    best_x = x0.copy()
    best_f = -np.inf

    def project(x):
        return np.minimum(np.maximum(x, lo), hi)

    def evaluate(x):
        nonlocal n_evals, best_x, best_f
        if n_evals >= max_evals:
            raise MaxEvalsExceeded
        n_evals += 1
        v = float(f(x))
        if v != v:  # NaN ranks below everything
            v = -np.inf
        if v > best_f:
            best_f, best_x = v, x.copy()
        return v

    trace: list[float] = []
    it = 0
    try:
        simplex = [x0.copy()]
        for i in range(dim):
            d = step * x0[i] if x0[i] != 0.0 else ZERO_STEP
            xi = x0.copy()
            xi[i] = x0[i] + d
            if xi[i] > hi[i]:
                xi[i] = x0[i] - d
            simplex.append(project(xi))
        values = [evaluate(x) for x in simplex]
        while True:
            order = sorted(range(dim + 1), key=lambda k: -values[k])
            simplex = [simplex[k] for k in order]
            values = [values[k] for k in order]
            trace.append(best_f)
            if callback is not None:
                callback(it, simplex[0], values[0])
            if values[0] - values[-1] < tol:
                return CalibrationResult(best_x, best_f, n_evals, True, trace, n_iterations=it,
                                         message="simplex value spread below tolerance")
            if xtol > 0.0:
                scale = np.maximum(np.abs(simplex[0]), 1.0)
                if max(np.max(np.abs(x - simplex[0]) / scale) for x in simplex[1:]) < xtol:
                    return CalibrationResult(best_x, best_f, n_evals, False, trace, n_iterations=it,
                                             message="simplex collapsed")
            it += 1
            centroid = np.mean(simplex[:-1], axis=0)
            worst = simplex[-1]
            xr = project(centroid + ALPHA * (centroid - worst))
            fr = evaluate(xr)
            if fr > values[0]:
                xe = project(centroid + GAMMA * (xr - centroid))
                fe = evaluate(xe)
                if fe > fr:
                    simplex[-1], values[-1] = xe, fe
                else:
                    simplex[-1], values[-1] = xr, fr
                continue
            if fr > values[-2]:
                simplex[-1], values[-1] = xr, fr
                continue
            if fr > values[-1]:
                xc = project(centroid + RHO * (xr - centroid))
                fc = evaluate(xc)
                if fc >= fr:
                    simplex[-1], values[-1] = xc, fc
                    continue
            else:
                xc = project(centroid + RHO * (worst - centroid))
                fc = evaluate(xc)
                if fc > values[-1]:
                    simplex[-1], values[-1] = xc, fc
                    continue
            for k in range(1, dim + 1):
                simplex[k] = project(simplex[0] + SIGMA * (simplex[k] - simplex[0]))
                values[k] = evaluate(simplex[k])
    except MaxEvalsExceeded:
        trace.append(best_f)
        return CalibrationResult(best_x, best_f, n_evals, False, trace, n_iterations=it,
                                 message="evaluation budget exhausted")


def nelder_mead_restarts(f: Callable[[np.ndarray], float], x0: Sequence[float],
                         bounds: Optional[Sequence[tuple[float, float]]] = None, tol: float = 1e-3,
                         max_evals: int = 400, callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
                         xtol: float = 1e-3) -> CalibrationResult:
    """Nelder-Mead restarted from the best point whenever the simplex collapses.

    A collapsed simplex can stall far from the optimum when one direction
    dominates early progress. Each restart builds a fresh simplex; the run
    counts as converged when the value spread drops below ``tol`` or when a
    restart fails to improve the best value by more than ``tol``.
    """
    x = np.asarray(x0, dtype=np.float64).ravel()
    evals = 0
    iters = 0
    trace: list[float] = []
    best: Optional[CalibrationResult] = None
    while True:
        offset = iters

        def cb(it, xb, v):
            if callback is not None:
                callback(offset + it, xb, v)

        r = nelder_mead(f, x, bounds, tol=tol, max_evals=max_evals - evals, callback=cb, xtol=xtol)
        evals += r.n_evals
        iters += r.n_iterations + 1
        prev = best.best_loglik if best is not None else -np.inf
        trace.extend(max(v, prev) for v in r.trace)
        stalled = best is not None and r.best_loglik <= prev + tol
        if best is None or r.best_loglik > prev:
            best = r
        done = r.converged or stalled
        if done or evals >= max_evals:
            msg = r.message if r.converged else ("restart made no progress" if stalled else r.message)
            return CalibrationResult(best.best_params, best.best_loglik, evals, done, trace,
                                     n_iterations=iters, message=msg)
        x = best.best_params
