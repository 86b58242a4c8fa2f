"""Latency benchmark harness and statistical characterization."""
from .fit import GEV, KERNEL, FitResult, fit_gev, fit_kernel, monte_carlo
from .gev import (FitDiverged, GevParams, OutOfSupport, gev_cdf, gev_logpdf, gev_pdf,
                  gev_quantile, gev_sample, pwm_estimate)
from .kde import silverman_bandwidth
from .scenario import (SCENARIO_NAMES, LatencySample, ScenarioAborted, ScenarioConfig, SlowMode,
                       load_scenario, make_payload, model_latencies, read_csv, run_scenario,
                       write_csv)
from .stats import InsufficientSamples, SummaryStats, summarize

__all__ = [
    "GEV",
    "KERNEL",
    "FitResult",
    "fit_gev",
    "fit_kernel",
    "monte_carlo",
    "FitDiverged",
    "GevParams",
    "OutOfSupport",
    "gev_cdf",
    "gev_logpdf",
    "gev_pdf",
    "gev_quantile",
    "gev_sample",
    "pwm_estimate",
    "silverman_bandwidth",
    "SCENARIO_NAMES",
    "LatencySample",
    "ScenarioAborted",
    "ScenarioConfig",
    "SlowMode",
    "load_scenario",
    "make_payload",
    "model_latencies",
    "read_csv",
    "run_scenario",
    "write_csv",
    "InsufficientSamples",
    "SummaryStats",
    "summarize",
]
