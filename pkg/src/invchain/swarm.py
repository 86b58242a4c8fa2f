"""Pub/sub replication of oplogs between peers.

Peers periodically announce their heads for every log they replicate. A peer
that hears about unknown heads requests those entries, then keeps requesting
missing parents until the announced history is complete, then joins. The
protocol logic lives in :class:`Replicator` and is transport-agnostic; it is
driven either by :class:`SwarmSim` (a deterministic discrete-event simulator
with a virtual clock) or by :mod:`invchain.tcpnode` over real sockets.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .blockstore import BlockStore, Cid
from .oplog import BadSignature, Entry, Identity, InvalidEntry, Log
from .stores import Store, StoreKind, open_store
from .wire import FrameError, decode_frame, encode_frame

log = logging.getLogger(__name__)

HEADS_ANNOUNCE = "HEADS_ANNOUNCE"
ENTRY_REQUEST = "ENTRY_REQUEST"
ENTRY_RESPONSE = "ENTRY_RESPONSE"
MESSAGE_TYPES = (HEADS_ANNOUNCE, ENTRY_REQUEST, ENTRY_RESPONSE)

DEFAULT_ANNOUNCE_MS = 500.0


class MalformedMessage(ValueError):
    pass


class SyncTimeout(Exception):
    def __init__(self, report: "ConvergenceReport") -> None:
        self.report = report
        super().__init__(f"swarm not converged by t={report.time_ms:.1f} ms")


@dataclass(frozen=True)
class Message:
    type: str
    log_address: str
    cids: tuple[Cid, ...] = ()
    entries: tuple[Entry, ...] = ()

    def to_obj(self) -> dict:
        d: dict[str, Any] = {"type": self.type, "log_address": self.log_address}
        if self.type == HEADS_ANNOUNCE:
            d["heads"] = sorted(c.hex() for c in self.cids)
        elif self.type == ENTRY_REQUEST:
            d["cids"] = sorted(c.hex() for c in self.cids)
        else:
            d["entries"] = [e.to_dict() for e in self.entries]
        return d

    def encode(self) -> bytes:
        return encode_frame(self.to_obj())

    @classmethod
    def from_obj(cls, d: Any) -> "Message":
        if not isinstance(d, dict):
            raise MalformedMessage("message must be an object")
        mtype, address = d.get("type"), d.get("log_address")
        if mtype not in MESSAGE_TYPES or not isinstance(address, str):
            raise MalformedMessage(f"bad message header {mtype!r}")
        try:
            if mtype == HEADS_ANNOUNCE:
                return cls(mtype, address, tuple(Cid.from_hex(h) for h in d["heads"]))
            if mtype == ENTRY_REQUEST:
                return cls(mtype, address, tuple(Cid.from_hex(h) for h in d["cids"]))
            return cls(mtype, address, entries=tuple(Entry.from_dict(e) for e in d["entries"]))
        except (KeyError, TypeError, ValueError, InvalidEntry) as exc:
            raise MalformedMessage(str(exc)) from None

    @classmethod
    def decode(cls, frame: bytes) -> "Message":
        try:
            return cls.from_obj(decode_frame(frame))
        except FrameError as exc:
            raise MalformedMessage(str(exc)) from None


@dataclass
class NetworkModel:
    """One-way link delay and loss.

    With ``samples`` set, delays are drawn from that empirical list. Otherwise
    they lie in ``[min_ms, max_ms]`` with mean ``avg_ms``: triangular when a
    mode reproducing the mean exists inside the interval, else a power-law
    skew toward the near end (which keeps the bounds and the mean exact).
    """

    min_ms: float = 0.0
    avg_ms: float = 0.0
    max_ms: float = 0.0
    loss: float = 0.0
    samples: Sequence[float] | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must lie in [0, 1]")
        if self.samples is None and not (self.min_ms <= self.avg_ms <= self.max_ms):
            raise ValueError("need min <= avg <= max")
        if self.samples is not None and (len(self.samples) == 0 or min(self.samples) < 0):
            raise ValueError("empirical samples must be a non-empty list of delays >= 0")

    @classmethod
    def from_rtt(cls, min_ms: float, avg_ms: float, max_ms: float, **kw) -> "NetworkModel":
        """Link model from round-trip figures, halved per direction."""
        return cls(min_ms / 2, avg_ms / 2, max_ms / 2, **kw)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.samples is not None:
            return min(self.samples), max(self.samples)
        return self.min_ms, self.max_ms

    @property
    def mean_ms(self) -> float:
        if self.samples is not None:
            return sum(self.samples) / len(self.samples)
        return self.avg_ms

    def rng(self) -> random.Random:
        return random.Random(self.seed)

    def sample(self, rng: random.Random) -> float:
        if self.samples is not None:
            return rng.choice(self.samples)
        lo, avg, hi = self.min_ms, self.avg_ms, self.max_ms
        if hi == lo:
            return lo
        mode = 3 * avg - lo - hi
        if lo <= mode <= hi:
            return rng.triangular(lo, hi, mode)
        u = rng.random()
        if mode < lo:
            a = (hi - lo) / (avg - lo) - 1
            return lo + (hi - lo) * u ** a
        a = (hi - lo) / (hi - avg) - 1
        return hi - (hi - lo) * u ** a

    def lost(self, rng: random.Random) -> bool:
        return self.loss > 0 and rng.random() < self.loss

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"loss": self.loss}
        if self.samples is not None:
            d["samples_ms"] = list(self.samples)
        else:
            d.update(min_ms=self.min_ms, avg_ms=self.avg_ms, max_ms=self.max_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        if "rtt_ms" in d:
            lo, avg, hi = d["rtt_ms"]
            return cls.from_rtt(lo, avg, hi, loss=d.get("loss", 0.0), seed=d.get("seed"))
        if "samples_ms" in d:
            return cls(samples=list(d["samples_ms"]), loss=d.get("loss", 0.0), seed=d.get("seed"))
        return cls(d["min_ms"], d["avg_ms"], d["max_ms"], d.get("loss", 0.0), seed=d.get("seed"))


# Round-trip figures measured from the ground station to the store host.
INTRANET_RTT_MS = (0.935, 1.034, 1.695)
INTERNET_RTT_MS = (37.948, 39.362, 51.172)


def intranet(**kw) -> NetworkModel:
    return NetworkModel.from_rtt(*INTRANET_RTT_MS, **kw)


def internet(**kw) -> NetworkModel:
    return NetworkModel.from_rtt(*INTERNET_RTT_MS, **kw)


@dataclass
class ReplicatorStats:
    announces_sent: int = 0
    requests_sent: int = 0
    cids_requested: int = 0
    entries_joined: int = 0
    rejected: int = 0
    malformed: int = 0
    unsolicited: int = 0


class Replicator:
    """Protocol state machine for one peer.

    ``handle`` consumes a decoded message from ``sender`` and returns the
    replies to send back to that sender.
    """

    def __init__(self, logs: Iterable[Log] = ()) -> None:
        self.logs: dict[str, Log] = {}
        self.stats = ReplicatorStats()
        self._outstanding: dict[tuple[str, str], set[Cid]] = defaultdict(set)
        for lg in logs:
            self.add_log(lg)

    def add_log(self, lg: Log) -> None:
        self.logs[lg.address] = lg

    def announcement(self, address: str) -> Message:
        self.stats.announces_sent += 1
        return Message(HEADS_ANNOUNCE, address, tuple(sorted(self.logs[address].heads())))

    def announcements(self) -> list[Message]:
        return [self.announcement(a) for a in sorted(self.logs)]

    def _request(self, sender: str, address: str, cids: set[Cid]) -> list[Message]:
        if not cids:
            return []
        self._outstanding[(sender, address)].update(cids)
        self.stats.requests_sent += 1
        self.stats.cids_requested += len(cids)
        return [Message(ENTRY_REQUEST, address, tuple(sorted(cids)))]

    def handle_frame(self, frame: bytes, sender: str) -> list[Message]:
        try:
            msg = Message.decode(frame)
        except MalformedMessage as exc:
            self.stats.malformed += 1
            log.debug("dropping malformed frame from %s: %s", sender, exc)
            return []
        return self.handle(msg, sender)

    def handle_obj(self, obj: Any, sender: str) -> list[Message]:
        try:
            msg = Message.from_obj(obj)
        except MalformedMessage as exc:
            self.stats.malformed += 1
            log.debug("dropping malformed message from %s: %s", sender, exc)
            return []
        return self.handle(msg, sender)

    def handle(self, msg: Message, sender: str) -> list[Message]:
        lg = self.logs.get(msg.log_address)
        if lg is None:
            return []
        if msg.type == HEADS_ANNOUNCE:
            return self.handle_announce(lg, msg, sender)
        if msg.type == ENTRY_REQUEST:
            have = [lg.get(c) for c in msg.cids if c in lg]
            return [Message(ENTRY_RESPONSE, lg.address, entries=tuple(have))] if have else []
        return self._handle_response(lg, msg, sender)

    def handle_announce(self, lg: Log, msg: Message, sender: str) -> list[Message]:
        quarantined = lg.quarantined
        need = {h for h in msg.cids if h not in lg and h not in quarantined}
        need |= lg.missing_parents()
        return self._request(sender, lg.address, need)

    def _handle_response(self, lg: Log, msg: Message, sender: str) -> list[Message]:
        wanted = self._outstanding.get((sender, lg.address), set())
        entries = [e for e in msg.entries if e.cid in wanted]
        self.stats.unsolicited += len(msg.entries) - len(entries)
        if not entries:
            return []
        wanted.difference_update(e.cid for e in entries)
        try:
            joined = lg.join(entries)
        except (BadSignature, InvalidEntry) as exc:
            self.stats.rejected += len(entries)
            log.warning("rejected entries from %s: %s", sender, exc)
            return []
        self.stats.entries_joined += len(joined)
        return self._request(sender, lg.address, lg.missing_parents())


@dataclass
class Peer:
    name: str
    identity: Identity
    blockstore: BlockStore
    replicator: Replicator = field(default_factory=Replicator)
    stores: dict[str, Store] = field(default_factory=dict)

    def open_store(self, kind: StoreKind | str, name: str, creator: bytes | None = None) -> Store:
        store = open_store(kind, name, self.identity, self.blockstore, creator)
        if store.address in self.stores:
            return self.stores[store.address]
        self.stores[store.address] = store
        self.replicator.add_log(store.log)
        return store

    def add_log(self, lg: Log) -> None:
        self.replicator.add_log(lg)

    @property
    def logs(self) -> dict[str, Log]:
        return self.replicator.logs


@dataclass
class Link:
    model: NetworkModel
    rng: random.Random
    up: bool = True


@dataclass
class ConvergenceReport:
    converged: bool
    time_ms: float
    heads: dict[str, dict[str, frozenset[Cid]]]

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "time_ms": self.time_ms,
            "heads": {
                peer: {addr: sorted(c.hex() for c in hs) for addr, hs in logs.items()}
                for peer, logs in self.heads.items()
            },
        }


@dataclass
class SimStats:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    severed: int = 0


class SwarmSim:
    """Single-threaded discrete-event swarm under a virtual millisecond clock.

    Every random choice (announce phases, link delays, loss) derives from
    ``seed``, so a run is bit-reproducible. Messages cross the wire as
    encoded frames, exercising the real codec.
    """

    def __init__(self, seed: int = 0, announce_ms: float = DEFAULT_ANNOUNCE_MS) -> None:
        if announce_ms <= 0:
            raise ValueError("announce period must be positive")
        self.seed = seed
        self.announce_ms = announce_ms
        self.now = 0.0
        self.peers: dict[str, Peer] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.stats = SimStats()
        self._rng = random.Random(f"swarm:{seed}")
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    # topology
    def add_peer(self, name: str, identity: Identity | None = None,
                 blockstore: BlockStore | None = None) -> Peer:
        if name in self.peers:
            raise ValueError(f"duplicate peer {name}")
        identity = identity or Identity.from_seed(f"{self.seed}:{name}".encode())
        peer = Peer(name, identity, blockstore or BlockStore())
        self.peers[name] = peer
        phase = self._rng.uniform(0, self.announce_ms)
        self.schedule(self.now + phase, lambda: self._announce_tick(name))
        return peer

    def connect(self, a: str, b: str, model: NetworkModel | None = None) -> None:
        model = model or NetworkModel()
        for src, dst in ((a, b), (b, a)):
            rng = random.Random(f"link:{self.seed}:{src}->{dst}")
            self.links[(src, dst)] = Link(model, rng)

    def full_mesh(self, model: NetworkModel | None = None) -> None:
        for a, b in itertools.combinations(sorted(self.peers), 2):
            self.connect(a, b, model)

    def line(self, model: NetworkModel | None = None) -> None:
        names = list(self.peers)
        for a, b in zip(names, names[1:]):
            self.connect(a, b, model)

    def sever(self, a: str, b: str) -> None:
        self.links[(a, b)].up = False
        self.links[(b, a)].up = False

    def heal(self, a: str, b: str) -> None:
        self.links[(a, b)].up = True
        self.links[(b, a)].up = True

    def neighbors(self, name: str) -> list[str]:
        return sorted(dst for (src, dst) in self.links if src == name)

    # event machinery
    def schedule(self, at_ms: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._queue, (at_ms, next(self._seq), fn))

    def _announce_tick(self, name: str) -> None:
        for address in sorted(self.peers[name].logs):
            self.announce(name, address)
        self.schedule(self.now + self.announce_ms, lambda: self._announce_tick(name))

    def announce(self, name: str, address: str) -> None:
        """Send current heads of one log to every neighbor."""
        peer = self.peers[name]
        frame = peer.replicator.announcement(address).encode()
        for dst in self.neighbors(name):
            self.send(name, dst, frame)

    def send(self, src: str, dst: str, frame: bytes) -> None:
        link = self.links[(src, dst)]
        self.stats.sent += 1
        if not link.up:
            self.stats.severed += 1
            return
        if link.model.lost(link.rng):
            self.stats.lost += 1
            return
        delay = link.model.sample(link.rng)
        self.schedule(self.now + delay, lambda: self._deliver(src, dst, frame))

    def _deliver(self, src: str, dst: str, frame: bytes) -> None:
        if not self.links[(src, dst)].up:
            self.stats.severed += 1
            return
        self.stats.delivered += 1
        for reply in self.peers[dst].replicator.handle_frame(frame, src):
            self.send(dst, src, reply.encode())

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, fn = heapq.heappop(self._queue)
        self.now = max(self.now, at)
        fn()
        return True

    def run_until(self, t_ms: float) -> None:
        while self._queue and self._queue[0][0] <= t_ms:
            self.step()
        self.now = max(self.now, t_ms)

    # convergence
    def heads(self) -> dict[str, dict[str, frozenset[Cid]]]:
        return {n: {a: lg.heads() for a, lg in p.logs.items()} for n, p in self.peers.items()}

    def converged(self) -> bool:
        by_address: dict[str, list[Log]] = defaultdict(list)
        for p in self.peers.values():
            for a, lg in p.logs.items():
                by_address[a].append(lg)
        for logs in by_address.values():
            first = logs[0]
            for lg in logs:
                if lg.quarantined or lg.heads() != first.heads() or len(lg) != len(first):
                    return False
        return True

    def report(self) -> ConvergenceReport:
        return ConvergenceReport(self.converged(), self.now, self.heads())

    def sync_until_quiescent(self, deadline_ms: float) -> ConvergenceReport:
        """Run until every replicated log has identical heads on all peers.

        ``deadline_ms`` is absolute virtual time. Raises :class:`SyncTimeout`
        carrying the per-peer heads if convergence is not reached.
        """
        while not self.converged():
            if not self._queue or self._queue[0][0] > deadline_ms:
                self.now = max(self.now, deadline_ms)
                raise SyncTimeout(self.report())
            self.step()
        return self.report()
