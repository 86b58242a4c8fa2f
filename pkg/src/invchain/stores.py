"""The five database kinds as materialized views over an oplog.

Every store appends :class:`StoreOp` payloads to its log and answers reads by
folding the log in traversal order. Conflicts resolve last-writer-wins in
that order, so every replica holding the same entries computes the same state.

Operation payload schema (canonical JSON, fixed key order)::

    {"op": "ADD"|"REMOVE"|"PUT"|"DEL"|"INC", "key": str|null, "value": any}
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any

from .blockstore import BlockStore, Cid
from .oplog import Entry, Identity, Log, log_address
from .wire import canonical_json


class StoreError(Exception):
    pass


class KindMismatch(StoreError):
    pass


class MalformedOperation(StoreError):
    def __init__(self, cid: Cid | None, reason: str) -> None:
        self.cid = cid
        super().__init__(f"entry {cid}: {reason}" if cid else reason)


class StoreKind(str, enum.Enum):
    EVENTLOG = "eventlog"
    FEED = "feed"
    KEYVALUE = "keyvalue"
    DOCS = "docs"
    COUNTER = "counter"


LEGAL_OPS = {
    StoreKind.EVENTLOG: {"ADD"},
    StoreKind.FEED: {"ADD", "REMOVE"},
    StoreKind.KEYVALUE: {"PUT", "DEL"},
    StoreKind.DOCS: {"PUT", "DEL"},
    StoreKind.COUNTER: {"INC"},
}

DOC_KEY = "_id"


@dataclass(frozen=True)
class StoreOp:
    op: str
    key: str | None = None
    value: Any = None

    def to_bytes(self) -> bytes:
        return canonical_json({"op": self.op, "key": self.key, "value": self.value})

    @classmethod
    def from_bytes(cls, data: bytes, cid: Cid | None = None) -> "StoreOp":
        try:
            d = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise MalformedOperation(cid, "payload is not JSON") from None
        if not isinstance(d, dict) or list(d) != ["op", "key", "value"]:
            raise MalformedOperation(cid, "payload does not follow the op schema")
        return cls(d["op"], d["key"], d["value"])

    def validate(self, kind: StoreKind, cid: Cid | None = None) -> None:
        if self.op not in LEGAL_OPS[kind]:
            raise MalformedOperation(cid, f"{self.op} is not legal in a {kind.value} store")
        if self.key is not None and not isinstance(self.key, str):
            raise MalformedOperation(cid, "key must be a string")
        if kind is StoreKind.FEED and self.op == "REMOVE":
            try:
                Cid.from_hex(self.key or "")
            except ValueError:
                raise MalformedOperation(cid, "REMOVE must name an entry cid") from None
        elif kind in (StoreKind.KEYVALUE, StoreKind.DOCS) and self.key is None:
            raise MalformedOperation(cid, f"{self.op} requires a key")
        if kind is StoreKind.DOCS and self.op == "PUT":
            if not isinstance(self.value, dict) or self.value.get(DOC_KEY) != self.key:
                raise MalformedOperation(cid, f"document must carry {DOC_KEY} equal to the key")
        if kind is StoreKind.COUNTER:
            v = self.value
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise MalformedOperation(cid, "INC amount must be a positive integer")


def parse_op(kind: StoreKind, entry: Entry) -> StoreOp:
    op = StoreOp.from_bytes(entry.payload, entry.cid)
    op.validate(kind, entry.cid)
    return op


def reduce(kind: StoreKind, log: Log | list[Entry]) -> Any:
    """Fold the log (or an entry list, sorted here) into the kind's state.

    eventlog and feed give a list of ``(cid, value)`` pairs in traversal
    order, keyvalue and docs a dict, counter an int.
    """
    kind = StoreKind(kind)
    entries = log.traverse() if isinstance(log, Log) else sorted(log, key=Entry.sort_key)
    if kind is StoreKind.COUNTER:
        return sum(parse_op(kind, e).value for e in entries)
    if kind in (StoreKind.KEYVALUE, StoreKind.DOCS):
        state: dict[str, Any] = {}
        for e in entries:
            op = parse_op(kind, e)
            if op.op == "PUT":
                state[op.key] = op.value
            else:
                state.pop(op.key, None)
        return state
    items: dict[Cid, Any] = {}
    added: set[Cid] = set()
    for e in entries:
        op = parse_op(kind, e)
        if op.op == "ADD":
            items[e.cid] = op.value
            added.add(e.cid)
        else:
            target = Cid.from_hex(op.key)
            # concurrent REMOVEs of one target are fine; an unseen target is not
            if target not in added:
                raise MalformedOperation(e.cid, f"REMOVE targets unknown ADD {target}")
            items.pop(target, None)
    return list(items.items())


class Store:
    """A typed view over one log. Mutators return the appended entry's cid."""

    def __init__(self, kind: StoreKind | str, log: Log) -> None:
        self.kind = StoreKind(kind)
        self.log = log
        self._cache: tuple[frozenset[Cid], Any] | None = None

    @property
    def address(self) -> str:
        return self.log.address

    def state(self) -> Any:
        heads = self.log.heads()
        if self._cache is None or self._cache[0] != heads:
            self._cache = (heads, reduce(self.kind, self.log))
        return self._cache[1]

    def _require(self, kind: StoreKind) -> None:
        if self.kind is not kind:
            raise KindMismatch(f"{kind.value} operation on a {self.kind.value} store")

    def _append(self, op: StoreOp) -> Cid:
        op.validate(self.kind)
        return self.log.append(op.to_bytes()).cid

    # eventlog
    def log_add(self, value: Any) -> Cid:
        self._require(StoreKind.EVENTLOG)
        return self._append(StoreOp("ADD", None, value))

    def log_items(self) -> list[tuple[Cid, Any]]:
        self._require(StoreKind.EVENTLOG)
        return list(self.state())

    # feed
    def feed_add(self, value: Any) -> Cid:
        self._require(StoreKind.FEED)
        return self._append(StoreOp("ADD", None, value))

    def feed_remove(self, target: Cid) -> Cid:
        self._require(StoreKind.FEED)
        if target not in dict(self.state()):
            raise MalformedOperation(None, f"no live feed item {target}")
        return self._append(StoreOp("REMOVE", target.hex(), None))

    def feed_items(self) -> list[tuple[Cid, Any]]:
        self._require(StoreKind.FEED)
        return list(self.state())

    # keyvalue
    def kv_put(self, key: str, value: Any) -> Cid:
        self._require(StoreKind.KEYVALUE)
        return self._append(StoreOp("PUT", key, value))

    def kv_del(self, key: str) -> Cid:
        self._require(StoreKind.KEYVALUE)
        return self._append(StoreOp("DEL", key, None))

    def kv_get(self, key: str, default: Any = None) -> Any:
        self._require(StoreKind.KEYVALUE)
        return self.state().get(key, default)

    # docs
    def doc_put(self, doc: dict) -> Cid:
        self._require(StoreKind.DOCS)
        if not isinstance(doc, dict) or not isinstance(doc.get(DOC_KEY), str):
            raise MalformedOperation(None, f"document needs a string {DOC_KEY}")
        return self._append(StoreOp("PUT", doc[DOC_KEY], doc))

    def doc_del(self, doc_id: str) -> Cid:
        self._require(StoreKind.DOCS)
        return self._append(StoreOp("DEL", doc_id, None))

    def doc_get(self, doc_id: str) -> dict | None:
        self._require(StoreKind.DOCS)
        return self.state().get(doc_id)

    def doc_query(self, prefix: str) -> list[dict]:
        self._require(StoreKind.DOCS)
        return [d for k, d in sorted(self.state().items()) if k.startswith(prefix)]

    # counter
    def counter_inc(self, amount: int = 1) -> Cid:
        self._require(StoreKind.COUNTER)
        return self._append(StoreOp("INC", None, amount))

    def counter_value(self) -> int:
        self._require(StoreKind.COUNTER)
        return self.state()


def open_store(kind: StoreKind | str, name: str, identity: Identity,
               blockstore: BlockStore, creator: bytes | None = None) -> Store:
    """Open (or join) the store addressed by ``(kind, creator, name)``;
    the creator defaults to the local identity."""
    kind = StoreKind(kind)
    address = log_address(kind.value, creator or identity.public_key, name)
    return Store(kind, Log(address, identity, blockstore))
