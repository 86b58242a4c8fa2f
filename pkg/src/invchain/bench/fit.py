"""Distribution fits over latency samples and Monte Carlo resampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gev import GevParams, fit_gev_params, gev_pdf, gev_sample
from .kde import kde_loglik, kde_pdf, kde_sample, silverman_bandwidth

GEV = "GEV"
KERNEL = "Kernel"


@dataclass
class FitResult:
    family: str
    loglik: float
    params: GevParams | None = None
    bandwidth: float | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.family == GEV and self.params is None:
            raise ValueError("GEV fit needs params")
        if self.family == KERNEL:
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("kernel fit needs its reference samples")
            if not (self.bandwidth and self.bandwidth > 0):
                raise ValueError("kernel bandwidth must be positive")
        if self.family not in (GEV, KERNEL):
            raise ValueError(f"unknown family {self.family!r}")

    def pdf(self, x):
        if self.family == GEV:
            return gev_pdf(self.params, x)
        return kde_pdf(self.samples, self.bandwidth, x)

    def to_dict(self) -> dict:
        d: dict = {"family": self.family, "loglik": self.loglik}
        if self.family == GEV:
            d.update(mu=self.params.mu, sigma=self.params.sigma, k=self.params.k)
        else:
            d.update(bandwidth=self.bandwidth, n_samples=len(self.samples))
        return d


def fit_gev(samples) -> FitResult:
    params, ll = fit_gev_params(samples)
    return FitResult(GEV, ll, params=params)


def fit_kernel(samples, bandwidth: float | None = None) -> FitResult:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("kernel fit needs at least 2 samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    return FitResult(KERNEL, kde_loglik(x, h), bandwidth=h, samples=x.copy())


def monte_carlo(fit: FitResult, n: int, seed: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    if n == 0:
        return np.empty(0)
    if fit.family == GEV:
        return gev_sample(fit.params, n, rng)
    return kde_sample(fit.samples, fit.bandwidth, n, rng)
