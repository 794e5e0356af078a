"""Gaussian kernel density estimates and the log-likelihood objective."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

P_MIN = 1e-12
H_MIN = 1e-3
_EXACT_LIMIT = 20_000_000  # pairwise kernel evaluations before switching to the binned method
_CHUNK = 4_000_000


class EmptySample(ValueError):
    pass


def _as_sample(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptySample(f"{name} sample is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} sample contains non-finite values")
    return a


def silverman_bandwidth(x: np.ndarray, n_eff: Optional[float] = None) -> float:
    """0.9 min(sigma, IQR/1.34) n^(-1/5), floored at 1e-3.

    If the IQR is zero but the spread is not, sigma alone is used.
    ``n_eff`` replaces the sample size in the n^(-1/5) factor for
    autocorrelated samples.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    sigma = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25]) if n > 1 else (0.0, 0.0)
    iqr = float(q75 - q25) / 1.34
    spread = min(sigma, iqr) if iqr > 0.0 else sigma
    m = n if n_eff is None else max(1.0, float(n_eff))
    return max(H_MIN, 0.9 * spread * m ** -0.2)


class GaussianKDE:
    def __init__(self, sample, bandwidth: Optional[float] = None, n_eff: Optional[float] = None):
        self.sample = _as_sample(sample, "simulated")
        self.h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(self.sample, n_eff)
        if not self.h > 0.0:
            raise ValueError("bandwidth must be > 0")

    def pdf(self, x, method: str = "auto") -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if method == "auto":
            method = "exact" if x.size * self.sample.size <= _EXACT_LIMIT else "binned"
        if method == "exact":
            return self._pdf_exact(x)
        if method == "binned":
            return self._pdf_binned(x)
        raise ValueError(f"unknown KDE method {method!r}")

    def _pdf_exact(self, x: np.ndarray) -> np.ndarray:
        y = self.sample
        out = np.empty(x.size)
        step = max(1, _CHUNK // y.size)
        norm = 1.0 / (y.size * self.h * math.sqrt(2.0 * math.pi))
        for i in range(0, x.size, step):
            z = (x[i:i + step, None] - y[None, :]) / self.h
            out[i:i + step] = np.exp(-0.5 * z * z).sum(axis=1) * norm
        return out

    def _pdf_binned(self, x: np.ndarray) -> np.ndarray:
        # linear binning onto a grid, FFT convolution with the kernel, linear interpolation
        y = self.sample
        h = self.h
        lo = float(y.min()) - 6.0 * h
        hi = float(y.max()) + 6.0 * h
        delta = h / 20.0
        m = int(math.ceil((hi - lo) / delta)) + 1
        m = min(max(m, 256), 1 << 21)
        grid = np.linspace(lo, hi, m)
        delta = grid[1] - grid[0]
        pos = (y - lo) / delta
        i0 = np.clip(np.floor(pos).astype(np.int64), 0, m - 2)
        frac = pos - i0
        counts = np.bincount(i0, weights=1.0 - frac, minlength=m) + np.bincount(i0 + 1, weights=frac, minlength=m)
        half = min(m - 1, int(math.ceil(6.0 * h / delta)))
        offs = np.arange(-half, half + 1) * delta
        kern = np.exp(-0.5 * (offs / h) ** 2) / (h * math.sqrt(2.0 * math.pi) * y.size)
        size = m + kern.size - 1
        nfft = 1 << (size - 1).bit_length()
        conv = np.fft.irfft(np.fft.rfft(counts, nfft) * np.fft.rfft(kern, nfft), nfft)[half:half + m]
        dens = np.maximum(conv, 0.0)
        return np.interp(x, grid, dens, left=0.0, right=0.0)


def log_likelihood(recorded, simulated, estimator: str = "kde", method: str = "auto",
                   bandwidth: Optional[float] = None, n_eff: Optional[float] = None) -> float:
    """Sum over recorded values of log p(x), p fit to the simulated sample, floored at 1e-12.

    ``estimator="gaussian"`` replaces the KDE with a fitted normal density.
    ``n_eff`` is passed on to the bandwidth rule.
    """
    rec = _as_sample(recorded, "recorded")
    sim = _as_sample(simulated, "simulated")
    if estimator == "kde":
        p = GaussianKDE(sim, bandwidth, n_eff).pdf(rec, method)
    elif estimator == "gaussian":
        mu = float(sim.mean())
        sd = max(H_MIN, float(sim.std(ddof=1)) if sim.size > 1 else 0.0)
        z = (rec - mu) / sd
        p = np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return float(np.sum(np.log(np.maximum(p, P_MIN))))
