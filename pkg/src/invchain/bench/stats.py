"""Summary statistics for latency samples."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    variance: float  # unbiased, in s^2
    min: float
    max: float
    p50: float
    p95: float
    p99: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(samples) -> SummaryStats:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise InsufficientSamples("need at least 2 samples for a variance")
    p50, p95, p99 = np.percentile(x, [50, 95, 99], method="linear")
    var = float(np.var(x, ddof=1))
    return SummaryStats(len(x), float(x.mean()), max(var, 0.0), float(x.min()), float(x.max()),
                        float(p50), float(p95), float(p99))
