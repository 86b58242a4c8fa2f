"""Insertion-latency scenarios.

Each request appends one payload to an eventlog store and is timed from
issue to receipt of the entry cid. The measured time is modelled, not taken
from the wall clock, so runs are reproducible:

    latency = sum of 2 * round_trips one-way link delays
            + payload_bytes / bandwidth
            + service time (GEV draw) + per_byte_s * payload_bytes

The store append itself is still performed for every request, so a failing
store aborts the run. Draws use common random numbers: request ``i`` gets the
same uniforms in every scenario run with the same seed, which makes scenario
comparisons free of sampling noise.
"""
from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from ..blockstore import BlockStore
from ..oplog import Identity
from ..stores import Store, StoreKind, open_store
from ..swarm import NetworkModel
from .gev import GevParams, gev_quantile

SCENARIO_NAMES = ("A", "B", "C", "D", "E", "F")


class ScenarioAborted(RuntimeError):
    def __init__(self, message: str, samples: list["LatencySample"]) -> None:
        self.samples = samples
        super().__init__(message)


@dataclass(frozen=True)
class LatencySample:
    request_index: int
    latency_s: float


@dataclass(frozen=True)
class SlowMode:
    """Optional second delay mode: with probability ``prob`` a request pays
    ``extra_ms`` more. Emulates a bimodal latency shape."""
    prob: float
    extra_ms: float


@dataclass
class ScenarioConfig:
    name: str
    n_tags: int
    payload_bytes: int
    network: NetworkModel
    n_requests: int = 2000
    seed: int = 0
    round_trips: int = 1
    bandwidth_bytes_per_s: float = math.inf
    service: GevParams = field(default_factory=lambda: GevParams(0.125, 0.04, 0.1))
    per_byte_s: float = 4.8e-7
    slow_mode: SlowMode | None = None

    def __post_init__(self) -> None:
        if self.n_requests <= 0:
            raise ValueError("n_requests must be > 0")
        if self.n_tags <= 0 or self.payload_bytes < 0 or self.round_trips < 0:
            raise ValueError("n_tags must be > 0, payload_bytes and round_trips >= 0")
        if not self.bandwidth_bytes_per_s > 0:
            raise ValueError("bandwidth must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d.pop("description", None)
        net = NetworkModel.from_dict(d.pop("network"))
        bw = d.pop("bandwidth_bytes_per_s", None)
        svc = d.pop("service", None)
        slow = d.pop("slow_mode", None)
        cfg = cls(network=net, **d)
        if bw is not None:
            cfg.bandwidth_bytes_per_s = float(bw)
        if svc is not None:
            cfg.service = GevParams(svc["mu"], svc["sigma"], svc["k"])
        if slow is not None:
            cfg.slow_mode = SlowMode(slow["prob"], slow["extra_ms"])
        cfg.__post_init__()
        return cfg

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "name": self.name, "n_tags": self.n_tags, "payload_bytes": self.payload_bytes,
            "network": self.network.to_dict(), "n_requests": self.n_requests, "seed": self.seed,
            "round_trips": self.round_trips,
            "service": {"mu": self.service.mu, "sigma": self.service.sigma, "k": self.service.k},
            "per_byte_s": self.per_byte_s,
        }
        if math.isfinite(self.bandwidth_bytes_per_s):
            d["bandwidth_bytes_per_s"] = self.bandwidth_bytes_per_s
        if self.slow_mode is not None:
            d["slow_mode"] = {"prob": self.slow_mode.prob, "extra_ms": self.slow_mode.extra_ms}
        return d


def load_scenario(name_or_path: str | Path) -> ScenarioConfig:
    """A bundled scenario by letter, or a JSON config file."""
    s = str(name_or_path)
    if s.upper() in SCENARIO_NAMES and not Path(s).exists():
        text = resources.files("invchain").joinpath(f"data/scenarios/{s.upper()}.json").read_text()
    else:
        p = Path(s)
        if not p.is_file():
            raise FileNotFoundError(f"no bundled scenario or file named {s!r}")
        text = p.read_text()
    return ScenarioConfig.from_dict(json.loads(text))


def make_payload(n_tags: int, target_bytes: int, seed: int = 0) -> str:
    """Inventory-like JSON with ``n_tags`` ids, padded to ``target_bytes``.

    Tag ids are 5 hex chars, so ids plus separators cost 6 bytes per tag.
    If the ids alone exceed the target the payload is simply longer.
    """
    rng = random.Random(f"tags:{seed}")
    ids = ",".join("%05x" % rng.getrandbits(20) for _ in range(n_tags))
    body = '{"n":%d,"tags":"%s","pad":"' % (n_tags, ids)
    pad = max(0, target_bytes - len(body) - 2)
    return body + "0" * pad + '"}'


def _draws(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Service and slow-mode uniforms, shared across scenarios for a seed."""
    rng = np.random.default_rng(cfg.seed)
    u = rng.random((cfg.n_requests, 2))
    u[:, 0] = np.clip(u[:, 0], 1e-12, 1 - 1e-12)
    return u[:, 0], u[:, 1]


def model_latencies(cfg: ScenarioConfig, payload_bytes: int | None = None) -> np.ndarray:
    size = cfg.payload_bytes if payload_bytes is None else payload_bytes
    u_svc, u_slow = _draws(cfg)
    service = np.maximum(np.asarray(gev_quantile(cfg.service, u_svc)), 0.0)
    net_rng = random.Random(f"{cfg.seed}:net")
    legs = 2 * cfg.round_trips
    net = np.array([sum(cfg.network.sample(net_rng) for _ in range(legs)) for _ in range(cfg.n_requests)])
    lat = net / 1000.0 + size / cfg.bandwidth_bytes_per_s + service + cfg.per_byte_s * size
    if cfg.slow_mode is not None:
        lat = lat + np.where(u_slow < cfg.slow_mode.prob, cfg.slow_mode.extra_ms / 1000.0, 0.0)
    return lat


def run_scenario(cfg: ScenarioConfig, store: Store | None = None, chain=None, *,
                 contract: str | None = None, token: str | None = None,
                 csv_path: str | Path | None = None) -> list[LatencySample]:
    """Execute ``cfg.n_requests`` sequential inserts and return their latencies.

    With a chain handle (plus ``contract`` and ``token``) every payload is
    also anchored, which does not count toward the measured latency.
    On store failure raises :class:`ScenarioAborted` carrying the samples
    collected so far (also written to ``csv_path``).
    """
    if store is None:
        store = open_store(StoreKind.EVENTLOG, f"bench-{cfg.name}",
                           Identity.from_seed(f"bench:{cfg.seed}".encode()), BlockStore())
    payload = make_payload(cfg.n_tags, cfg.payload_bytes, cfg.seed)
    lat = model_latencies(cfg, len(payload.encode("utf-8")))
    samples: list[LatencySample] = []
    try:
        for i in range(cfg.n_requests):
            cid = store.log_add(payload)
            samples.append(LatencySample(i, float(lat[i])))
            if chain is not None:
                chain.set_data(contract, payload, cid.hex(), token)
    except Exception as exc:
        if csv_path is not None:
            write_csv(samples, csv_path)
        raise ScenarioAborted(f"scenario {cfg.name} aborted at request {len(samples)}: {exc}",
                              samples) from exc
    if csv_path is not None:
        write_csv(samples, csv_path)
    return samples


def write_csv(samples: list[LatencySample], path_or_file) -> None:
    if hasattr(path_or_file, "write"):
        _write_rows(samples, path_or_file)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(samples, fh)


def _write_rows(samples: list[LatencySample], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["request_index", "latency_s"])
    for s in samples:
        w.writerow([s.request_index, repr(s.latency_s)])


def read_csv(path: str | Path) -> list[LatencySample]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [LatencySample(int(row["request_index"]), float(row["latency_s"])) for row in r]
