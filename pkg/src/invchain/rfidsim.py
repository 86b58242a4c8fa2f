"""UAV inventory flight over a tag field with a log-distance RSSI model.

Received strength for a tag at distance ``d`` metres::

    ssi = P0 - 10 n log10(max(d, 0.1)) - attenuation_db + N(0, sigma)

A sample becomes a read when it clears the detection threshold and is not
suppressed by a blockage zone. One sampling round covers every tag each read
period while the reader moves linearly between waypoints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MATERIAL_LOSS_DB = {"cardboard": 0.5, "plastic": 1.0, "wood": 2.0}
MIN_DISTANCE_M = 0.1
AREA_M = (50.0, 40.0)
DAY_MS = 24 * 3600 * 1000


class UnknownTag(KeyError):
    pass


def parse_clock(text: str) -> int:
    """``"HH:MM:SS,mmm"`` to milliseconds since midnight."""
    try:
        hms, ms = text.split(",")
        h, m, s = (int(x) for x in hms.split(":"))
        msi = int(ms)
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}, expected HH:MM:SS,mmm") from None
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60 and 0 <= msi < 1000 and len(ms) == 3):
        raise ValueError(f"bad timestamp {text!r}")
    return ((h * 60 + m) * 60 + s) * 1000 + msi


def format_clock(ms: int) -> str:
    ms = int(round(ms)) % DAY_MS
    s, msi = divmod(ms, 1000)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    return f"{h:02d}:{m:02d}:{s:02d},{msi:03d}"


@dataclass(frozen=True)
class TagSpec:
    tag_id: str
    position: tuple[float, float, float]
    attenuation_db: float = 0.0
    material: str | None = None

    def __post_init__(self) -> None:
        if self.attenuation_db < 0:
            raise ValueError(f"{self.tag_id}: attenuation must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TagSpec":
        material = d.get("material")
        att = d.get("attenuation_db")
        if att is None:
            att = MATERIAL_LOSS_DB.get(material, 0.0) if material else 0.0
        return cls(d["tag_id"], tuple(float(v) for v in d["position"]), float(att), material)


def load_layout(path: str | Path) -> list[TagSpec]:
    data = json.loads(Path(path).read_text())
    tags = [TagSpec.from_dict(t) for t in (data["tags"] if isinstance(data, dict) else data)]
    ids = [t.tag_id for t in tags]
    if len(set(ids)) != len(ids):
        raise ValueError("tag ids must be unique within a layout")
    return tags


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    z: float
    t_ms: float


@dataclass
class FlightPath:
    waypoints: Sequence[Waypoint]
    takeoff: str = "00:00:00,000"
    bounds: tuple[float, float] = AREA_M

    def __post_init__(self) -> None:
        self.waypoints = tuple(self.waypoints)
        if not self.waypoints:
            raise ValueError("flight path needs at least one waypoint")
        times = [w.t_ms for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint arrival times must strictly increase")
        bx, by = self.bounds
        for w in self.waypoints:
            if not (0 <= w.x <= bx and 0 <= w.y <= by and w.z >= 0):
                raise ValueError(f"waypoint {w} outside the {bx} x {by} m area")
        parse_clock(self.takeoff)
        self._t = np.array(times)
        self._xyz = np.array([(w.x, w.y, w.z) for w in self.waypoints])

    @property
    def duration_ms(self) -> float:
        return self.waypoints[-1].t_ms

    def position_at(self, t_ms: float) -> np.ndarray:
        return np.array([np.interp(t_ms, self._t, self._xyz[:, k]) for k in range(3)])

    @classmethod
    def circular(cls, center: tuple[float, float], radius: float, altitude: float,
                 lap_ms: float, start: tuple[float, float] | None = None,
                 climb_ms: float = 10_000.0, laps: float = 1.0, points: int = 72,
                 takeoff: str = "00:00:00,000") -> "FlightPath":
        """Vertical climb at ``start`` (defaults to the circle's first point),
        a straight hop onto the circle, then ``laps`` turns around it."""
        cx, cy = center
        first = (cx + radius, cy)
        sx, sy = start if start is not None else first
        wps = [Waypoint(sx, sy, 0.0, 0.0), Waypoint(sx, sy, altitude, climb_ms)]
        t = climb_ms
        hop = math.dist((sx, sy), first)
        if hop > 0:
            speed = 2 * math.pi * radius / lap_ms
            t += hop / speed * 1000.0 if speed > 0 else 0.0
            t = max(t, climb_ms + 1.0)
            wps.append(Waypoint(*first, altitude, t))
        n = max(2, int(points * laps))
        for i in range(1, n + 1):
            a = 2 * math.pi * laps * i / n
            wps.append(Waypoint(cx + radius * math.cos(a), cy + radius * math.sin(a), altitude,
                                t + lap_ms * laps * i / n))
        return cls(wps, takeoff)

    def to_dict(self) -> dict:
        return {"takeoff": self.takeoff,
                "waypoints": [[w.x, w.y, w.z, w.t_ms] for w in self.waypoints]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlightPath":
        if "circular" in d:
            c = dict(d["circular"])
            c["center"] = tuple(c["center"])
            if "start" in c:
                c["start"] = tuple(c["start"])
            return cls.circular(takeoff=d.get("takeoff", "00:00:00,000"), **c)
        return cls([Waypoint(*w) for w in d["waypoints"]], d.get("takeoff", "00:00:00,000"))


@dataclass(frozen=True)
class BlockageZone:
    """Suppresses reads during ``[start_ms, end_ms)`` and/or while the reader
    is inside ``box`` (x0, y0, x1, y1); optionally only for ``tag_ids``."""

    start_ms: float | None = None
    end_ms: float | None = None
    box: tuple[float, float, float, float] | None = None
    tag_ids: frozenset[str] | None = None

    def blocks(self, t_ms: float, pos: Sequence[float], tag_id: str) -> bool:
        if self.tag_ids is not None and tag_id not in self.tag_ids:
            return False
        if self.start_ms is not None and not (self.start_ms <= t_ms < (self.end_ms or math.inf)):
            return False
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if not (x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1):
                return False
        return self.start_ms is not None or self.box is not None

    @classmethod
    def from_dict(cls, d: dict) -> "BlockageZone":
        ids = d.get("tag_ids")
        return cls(d.get("start_ms"), d.get("end_ms"),
                   tuple(d["box"]) if d.get("box") else None,
                   frozenset(ids) if ids is not None else None)


@dataclass
class ReaderParams:
    p0_dbm: float = -40.0
    exponent: float = 2.0
    sigma_db: float = 1.5
    threshold_dbm: float = -63.0
    read_period_ms: float = 500.0
    blockage: tuple[BlockageZone, ...] = ()

    def __post_init__(self) -> None:
        self.blockage = tuple(self.blockage)
        if self.exponent <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.sigma_db < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.threshold_dbm >= self.p0_dbm:
            raise ValueError("detection threshold must lie below the reference power")
        if self.read_period_ms <= 0:
            raise ValueError("read period must be positive")

    def mean_ssi(self, distance_m: float | np.ndarray, attenuation_db: float | np.ndarray = 0.0):
        d = np.maximum(distance_m, MIN_DISTANCE_M)
        return self.p0_dbm - 10.0 * self.exponent * np.log10(d) - attenuation_db

    def max_range_m(self, attenuation_db: float = 0.0) -> float:
        """Distance at which the mean signal meets the threshold."""
        return 10 ** ((self.p0_dbm - attenuation_db - self.threshold_dbm) / (10 * self.exponent))

    def blocked(self, t_ms: float, pos: Sequence[float], tag_id: str) -> bool:
        return any(z.blocks(t_ms, pos, tag_id) for z in self.blockage)

    @classmethod
    def from_dict(cls, d: dict) -> "ReaderParams":
        d = dict(d)
        d["blockage"] = tuple(BlockageZone.from_dict(z) for z in d.get("blockage", ()))
        return cls(**d)


@dataclass(frozen=True)
class TagRead:
    tag_id: str
    timestamp_ms: float
    ssi: float


def rssi_at(reader_pos: Sequence[float], tag: TagSpec, params: ReaderParams,
            rng: np.random.Generator, t_ms: float | None = None) -> float | None:
    """One SSI sample in dBm, or None for a blocked or sub-threshold sample."""
    d = math.dist(reader_pos, tag.position)
    noise = rng.normal(0.0, params.sigma_db) if params.sigma_db > 0 else 0.0
    if t_ms is not None and params.blocked(t_ms, reader_pos, tag.tag_id):
        return None
    ssi = float(params.mean_ssi(d, tag.attenuation_db)) + noise
    return ssi if ssi >= params.threshold_dbm else None


def simulate_flight(layout: Sequence[TagSpec], path: FlightPath, params: ReaderParams,
                    seed: int) -> list[TagRead]:
    """Every above-threshold, unblocked sample of the flight, in time order."""
    if not layout:
        raise ValueError("layout must contain at least one tag")
    rng = np.random.default_rng(seed)
    tag_pos = np.array([t.position for t in layout], dtype=float)
    atten = np.array([t.attenuation_db for t in layout], dtype=float)
    n_rounds = int(path.duration_ms // params.read_period_ms) + 1
    reads: list[TagRead] = []
    for k in range(n_rounds):
        t = k * params.read_period_ms
        pos = path.position_at(t)
        d = np.linalg.norm(tag_pos - pos, axis=1)
        # noise drawn for every tag every round keeps the stream layout-stable
        noise = rng.normal(0.0, params.sigma_db, size=len(layout)) if params.sigma_db > 0 \
            else np.zeros(len(layout))
        ssi = params.mean_ssi(d, atten) + noise
        for i in np.flatnonzero(ssi >= params.threshold_dbm):
            tag = layout[i]
            if params.blockage and params.blocked(t, pos, tag.tag_id):
                continue
            reads.append(TagRead(tag.tag_id, t, round(float(ssi[i]), 6)))
    return reads


@dataclass(frozen=True)
class SnapshotRow:
    seq: int
    pct_read: float
    timestamp: str
    tag_id: str


@dataclass
class InventorySnapshot:
    takeoff: str
    rows: list[SnapshotRow] = field(default_factory=list)
    total_tags: int = 0

    def validate(self) -> None:
        parse_clock(self.takeoff)
        seen: set[str] = set()
        last = None
        for k, row in enumerate(self.rows, start=1):
            if row.seq != k:
                raise ValueError(f"row {k}: sequence number {row.seq}")
            if abs(row.pct_read - 100.0 * k / self.total_tags) >= 1e-9:
                raise ValueError(f"row {k}: pct {row.pct_read} != 100*{k}/{self.total_tags}")
            if row.tag_id in seen:
                raise ValueError(f"row {k}: tag {row.tag_id} already read")
            seen.add(row.tag_id)
            t = _offset_ms(self.takeoff, row.timestamp)
            if last is not None and t < last:
                raise ValueError(f"row {k}: timestamp goes backwards")
            last = t
        if len(self.rows) > self.total_tags:
            raise ValueError("more rows than total tags")

    def elapsed_ms(self) -> list[int]:
        return [_offset_ms(self.takeoff, r.timestamp) for r in self.rows]

    def read_curve(self) -> list[tuple[float, float]]:
        """Cumulative (seconds since takeoff, % read) starting at (0, 0)."""
        return [(0.0, 0.0)] + [(ms / 1000.0, r.pct_read) for ms, r in zip(self.elapsed_ms(), self.rows)]


def _offset_ms(takeoff: str, stamp: str) -> int:
    return (parse_clock(stamp) - parse_clock(takeoff)) % DAY_MS


def first_detections(reads: Iterable[TagRead]) -> list[TagRead]:
    seen: dict[str, TagRead] = {}
    for r in sorted(reads, key=lambda r: r.timestamp_ms):
        if r.tag_id not in seen:
            seen[r.tag_id] = r
    return list(seen.values())


def snapshot_from_reads(reads: Iterable[TagRead], takeoff: str, total_tags: int) -> InventorySnapshot:
    firsts = first_detections(reads)
    if total_tags < len(firsts):
        raise ValueError(f"total_tags {total_tags} below the {len(firsts)} distinct tags read")
    base = parse_clock(takeoff)
    rows = [
        SnapshotRow(k, 100.0 * k / total_tags, format_clock(base + r.timestamp_ms), r.tag_id)
        for k, r in enumerate(firsts, start=1)
    ]
    return InventorySnapshot(takeoff, rows, total_tags)


def ssi_trace(reads: Iterable[TagRead], tag_id: str) -> list[tuple[float, float]]:
    trace = sorted((r.timestamp_ms, r.ssi) for r in reads if r.tag_id == tag_id)
    if not trace:
        raise UnknownTag(tag_id)
    return trace


def trace_csv(trace: Iterable[tuple[float, float]]) -> str:
    lines = ["timestamp_ms,ssi_dbm"]
    lines += [f"{t:.0f},{s:.3f}" for t, s in trace]
    return "\n".join(lines) + "\n"


def curve_csv(snapshot: InventorySnapshot) -> str:
    lines = ["elapsed_s,pct_read"]
    lines += [f"{t:.3f},{p:.9f}" for t, p in snapshot.read_curve()]
    return "\n".join(lines) + "\n"
