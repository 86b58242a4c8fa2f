"""Time sources in milliseconds.

``VirtualClock`` moves only when told to. ``ScaledClock`` follows the
monotonic wall clock multiplied by an acceleration factor; factor 1 is real
time.
"""
from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass


class VirtualClock:
    def __init__(self, start_ms: float = 0.0) -> None:
        self._now = float(start_ms)

    def now_ms(self) -> float:
        return self._now

    def advance(self, ms: float) -> float:
        if ms < 0:
            raise ValueError("time does not run backwards")
        self._now += ms
        return self._now

    def set(self, t_ms: float) -> None:
        if t_ms < self._now:
            raise ValueError("time does not run backwards")
        self._now = float(t_ms)

    async def sleep(self, ms: float) -> None:
        self.advance(ms)
        await asyncio.sleep(0)


class ScaledClock:
    def __init__(self, acceleration: float = 1.0, start_ms: float = 0.0) -> None:
        if not acceleration > 0:
            raise ValueError("acceleration must be positive")
        self.acceleration = acceleration
        self._start = float(start_ms)
        self._t0 = time.monotonic()

    def now_ms(self) -> float:
        return self._start + (time.monotonic() - self._t0) * 1000.0 * self.acceleration

    def wall_seconds(self, ms: float) -> float:
        """Wall time needed for ``ms`` of clock time to pass."""
        return ms / 1000.0 / self.acceleration

    async def sleep(self, ms: float) -> None:
        await asyncio.sleep(self.wall_seconds(ms))


@dataclass(frozen=True)
class ClockConfig:
    mode: str = "virtual"  # or "real"
    acceleration: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("virtual", "real"):
            raise ValueError(f"clock mode must be 'virtual' or 'real', not {self.mode!r}")
        if not self.acceleration > 0:
            raise ValueError("acceleration must be positive")

    def make(self, start_ms: float = 0.0) -> ScaledClock:
        """Clock driving a live service: real time, sped up in virtual mode."""
        return ScaledClock(self.acceleration if self.mode == "virtual" else 1.0, start_ms)
