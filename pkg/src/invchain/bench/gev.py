"""Generalized extreme value distribution: density, CDF, quantile, and fitting.

Parameterization: location ``mu``, scale ``sigma > 0``, shape ``k`` with

    F(x) = exp(-(1 + k z)^(-1/k)),   z = (x - mu) / sigma

so ``k > 0`` has a heavy right tail and a lower support bound, ``k < 0`` an
upper bound, and ``|k| < 1e-9`` is treated as the Gumbel limit
``F(x) = exp(-exp(-z))``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gamma

GUMBEL_EPS = 1e-9


class OutOfSupport(ValueError):
    pass


class FitDiverged(RuntimeError):
    def __init__(self, message: str, best: "GevParams | None" = None) -> None:
        self.best = best
        super().__init__(message)


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    k: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("GEV scale must be positive")

    @property
    def support(self) -> tuple[float, float]:
        if abs(self.k) < GUMBEL_EPS:
            return -math.inf, math.inf
        edge = self.mu - self.sigma / self.k
        return (edge, math.inf) if self.k > 0 else (-math.inf, edge)

    def mean(self) -> float:
        if abs(self.k) < GUMBEL_EPS:
            return self.mu + self.sigma * np.euler_gamma
        if self.k >= 1:
            return math.inf
        return self.mu + self.sigma * (gamma(1 - self.k) - 1) / self.k

    def variance(self) -> float:
        if abs(self.k) < GUMBEL_EPS:
            return (self.sigma * math.pi) ** 2 / 6
        if self.k >= 0.5:
            return math.inf
        g1, g2 = gamma(1 - self.k), gamma(1 - 2 * self.k)
        return self.sigma ** 2 * (g2 - g1 ** 2) / self.k ** 2


def _log_t(params: GevParams, x: np.ndarray) -> np.ndarray:
    """log of t(x) = (1 + k z)^(-1/k), or -z in the Gumbel limit."""
    z = (x - params.mu) / params.sigma
    if abs(params.k) < GUMBEL_EPS:
        return -z
    arg = params.k * z
    if np.any(arg <= -1):
        raise OutOfSupport(f"x outside GEV support {params.support}")
    return -np.log1p(arg) / params.k


def gev_cdf(params: GevParams, x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-np.exp(_log_t(params, x)))
    return float(out) if out.ndim == 0 else out


def gev_pdf(params: GevParams, x):
    x = np.asarray(x, dtype=float)
    lt = _log_t(params, x)
    out = np.exp((params.k + 1) * lt - np.exp(lt)) / params.sigma
    return float(out) if out.ndim == 0 else out


def gev_logpdf(params: GevParams, x):
    x = np.asarray(x, dtype=float)
    lt = _log_t(params, x)
    out = (params.k + 1) * lt - np.exp(lt) - math.log(params.sigma)
    return float(out) if out.ndim == 0 else out


def gev_quantile(params: GevParams, p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise OutOfSupport("quantile probability must lie in (0, 1)")
    y = -np.log(p)
    if abs(params.k) < GUMBEL_EPS:
        out = params.mu - params.sigma * np.log(y)
    else:
        out = params.mu + params.sigma * np.expm1(-params.k * np.log(y)) / params.k
    return float(out) if out.ndim == 0 else out


def gev_sample(params: GevParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws."""
    u = rng.random(n)
    u = np.clip(u, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    return gev_quantile(params, u) if n else np.empty(0)


def pwm_estimate(samples) -> GevParams:
    """Probability-weighted-moment estimate (Hosking, Wallis & Wood 1985)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 3:
        raise ValueError("PWM estimate needs at least 3 samples")
    j = np.arange(n, dtype=float)
    b0 = x.mean()
    b1 = np.sum(j / (n - 1) * x) / n
    b2 = np.sum(j * (j - 1) / ((n - 1) * (n - 2)) * x) / n
    l2 = 2 * b1 - b0
    if not l2 > 0:
        raise FitDiverged("samples have no spread")
    c = l2 / (3 * b2 - b0) - math.log(2) / math.log(3)
    kappa = 7.8590 * c + 2.9554 * c * c  # Hosking's shape, opposite sign to k
    if abs(kappa) < 1e-6:
        sigma = l2 / math.log(2)
        return GevParams(b0 - np.euler_gamma * sigma, sigma, 0.0)
    sigma = l2 * kappa / (gamma(1 + kappa) * (1 - 2.0 ** -kappa))
    mu = b0 + sigma * (gamma(1 + kappa) - 1) / kappa
    return GevParams(float(mu), float(sigma), float(-kappa))


def gev_nll(theta: np.ndarray, x: np.ndarray) -> float:
    mu, log_sigma, k = theta
    sigma = math.exp(log_sigma)
    z = (x - mu) / sigma
    if abs(k) < GUMBEL_EPS:
        return float(len(x) * log_sigma + np.sum(z) + np.sum(np.exp(-z)))
    arg = k * z
    if np.any(arg <= -1):
        return math.inf
    lg = np.log1p(arg)
    return float(len(x) * log_sigma + (1 + 1 / k) * np.sum(lg) + np.sum(np.exp(-lg / k)))


def fit_gev_params(samples) -> tuple[GevParams, float]:
    """Maximum likelihood via Nelder-Mead from the PWM start; returns
    (params, log-likelihood)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 3 or not np.all(np.isfinite(x)):
        raise FitDiverged("need at least 3 finite samples")
    if len(x) < 100:
        warnings.warn(f"GEV fit on only {len(x)} samples", stacklevel=2)
    if np.ptp(x) == 0:
        raise FitDiverged("constant samples: scale collapses to zero")
    start = pwm_estimate(x)
    theta0 = np.array([start.mu, math.log(start.sigma), start.k])
    if not math.isfinite(gev_nll(theta0, x)):
        # PWM start may put an extreme sample outside the support
        theta0[2] = 0.0
    scale = np.std(x)
    res = minimize(
        gev_nll, theta0, args=(x,), method="Nelder-Mead",
        options={"xatol": 1e-9 * max(scale, 1e-12), "fatol": 1e-10, "maxiter": 20_000,
                 "maxfev": 40_000, "initial_simplex": _simplex(theta0, scale)},
    )
    best = GevParams(float(res.x[0]), float(math.exp(res.x[1])), float(res.x[2]))
    if not (res.success and math.isfinite(res.fun)):
        raise FitDiverged(f"optimizer stopped: {res.message}", best)
    return best, -float(res.fun)


def _simplex(theta0: np.ndarray, scale: float) -> np.ndarray:
    steps = np.array([0.1 * scale, 0.1, 0.05])
    return np.vstack([theta0] + [theta0 + np.eye(3)[i] * steps[i] for i in range(3)])
