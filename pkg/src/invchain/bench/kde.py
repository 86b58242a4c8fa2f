"""Gaussian kernel density estimate with Silverman's bandwidth rule."""
from __future__ import annotations

import math

import numpy as np

_INV_SQRT_2PI = 1 / math.sqrt(2 * math.pi)


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    n = len(x)
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread > 0:
        return 0.9 * spread * n ** -0.2
    # all samples (nearly) equal: a narrow bump around the common value
    return max(abs(float(x[0])) * 1e-3, 1e-6)


def kde_pdf(samples: np.ndarray, bandwidth: float, x, chunk: int = 2048):
    """Density at ``x``; evaluated in chunks to bound memory."""
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(pts)
    for i in range(0, len(pts), chunk):
        z = (pts[i:i + chunk, None] - samples[None, :]) / bandwidth
        with np.errstate(over="ignore"):  # far tails overflow to inf, exp gives 0
            out[i:i + chunk] = np.exp(-0.5 * z * z).sum(axis=1)
    out *= _INV_SQRT_2PI / (len(samples) * bandwidth)
    return float(out[0]) if np.ndim(x) == 0 else out


def kde_loglik(samples: np.ndarray, bandwidth: float) -> float:
    dens = kde_pdf(samples, bandwidth, samples)
    return float(np.sum(np.log(np.maximum(dens, np.finfo(float).tiny))))


def kde_sample(samples: np.ndarray, bandwidth: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Smoothed bootstrap: pick a sample, add kernel noise."""
    idx = rng.integers(0, len(samples), size=n)
    return samples[idx] + rng.normal(0.0, bandwidth, size=n)
