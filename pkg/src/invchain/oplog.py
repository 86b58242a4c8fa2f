"""Signed, operation-based append-only log (a grow-only Merkle-DAG CRDT).

Each entry names its parents (the heads at append time) by cid, carries a
Lamport clock one greater than any parent, and is signed with Ed25519 by its
author. Replicas merge by set union of entries; the total order used by the
store reducers is ascending ``(lamport, author, cid)``.
"""
from __future__ import annotations

import base64
import binascii
import hashlib
import json
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .blockstore import BlockStore, Cid, NotFound
from .wire import canonical_json

QUARANTINE_CAP = 10_000


class LogError(Exception):
    pass


class BadSignature(LogError):
    def __init__(self, author: bytes, cid: Cid | None = None) -> None:
        self.author = author
        self.cid = cid
        super().__init__(f"bad signature on entry {cid} by author {author.hex()}")


class MissingParent(LogError):
    def __init__(self, missing: set[Cid]) -> None:
        self.missing = missing
        super().__init__(f"{len(missing)} parent(s) not available")


class InvalidEntry(LogError):
    pass


class Identity:
    """An Ed25519 signing identity."""

    def __init__(self, private_key: Ed25519PrivateKey) -> None:
        self._key = private_key
        self.public_key: bytes = private_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @classmethod
    def generate(cls) -> "Identity":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: bytes) -> "Identity":
        if len(seed) != 32:
            seed = hashlib.sha256(seed).digest()
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    def seed(self) -> bytes:
        return self._key.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )

    @classmethod
    def load_or_create(cls, path: str | os.PathLike) -> "Identity":
        """Key files hold the 32-byte private seed as hex."""
        path = Path(path)
        if path.exists():
            return cls.from_seed(bytes.fromhex(path.read_text().strip()))
        ident = cls.generate()
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(ident.seed().hex() + "\n")
        return ident

    def sign(self, data: bytes) -> bytes:
        return self._key.sign(data)

    def __repr__(self) -> str:
        return f"Identity({self.public_key.hex()[:12]}…)"


def verify_signature(author: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(author).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Entry:
    payload: bytes
    lamport: int
    author: bytes
    parents: tuple[Cid, ...]
    signature: bytes
    cid: Cid = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(sorted(set(self.parents))))
        object.__setattr__(self, "cid", Cid.of(self.to_bytes()))

    @classmethod
    def create(cls, identity: Identity, payload: bytes, lamport: int,
               parents: Iterable[Cid]) -> "Entry":
        parents = tuple(sorted(set(parents)))
        body = _unsigned(payload, lamport, identity.public_key, parents)
        return cls(payload, lamport, identity.public_key, parents,
                   identity.sign(canonical_json(body)))

    def signing_bytes(self) -> bytes:
        return canonical_json(_unsigned(self.payload, self.lamport, self.author, self.parents))

    def to_dict(self) -> dict:
        d = _unsigned(self.payload, self.lamport, self.author, self.parents)
        d["signature"] = self.signature.hex()
        return d

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Entry":
        try:
            if list(d) != ["payload", "lamport", "author", "parents", "signature"]:
                raise ValueError(f"unexpected entry keys {list(d)}")
            lamport = d["lamport"]
            if not isinstance(lamport, int) or isinstance(lamport, bool) or lamport < 0:
                raise ValueError("lamport must be a non-negative integer")
            parents = [Cid.from_hex(p) for p in d["parents"]]
            if [p.hex() for p in sorted(parents)] != d["parents"]:
                raise ValueError("parents not in canonical sorted order")
            author = bytes.fromhex(d["author"])
            if len(author) != 32:
                raise ValueError("author must be a 32-byte public key")
            return cls(
                payload=base64.b64decode(d["payload"], validate=True),
                lamport=lamport,
                author=author,
                parents=tuple(parents),
                signature=bytes.fromhex(d["signature"]),
            )
        except (KeyError, TypeError, ValueError, binascii.Error) as exc:
            raise InvalidEntry(f"malformed entry: {exc}") from None

    @classmethod
    def from_bytes(cls, data: bytes) -> "Entry":
        try:
            d = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise InvalidEntry(f"undecodable entry: {exc}") from None
        if not isinstance(d, dict):
            raise InvalidEntry("entry must be a JSON object")
        entry = cls.from_dict(d)
        if entry.to_bytes() != data:
            raise InvalidEntry("entry bytes are not in canonical form")
        return entry

    def verify(self) -> bool:
        return verify_signature(self.author, self.signature, self.signing_bytes())

    def sort_key(self) -> tuple[int, bytes, bytes]:
        return (self.lamport, self.author, self.cid.digest)


def _unsigned(payload: bytes, lamport: int, author: bytes, parents: Iterable[Cid]) -> dict:
    return {
        "payload": base64.b64encode(payload).decode("ascii"),
        "lamport": lamport,
        "author": author.hex(),
        "parents": sorted(p.hex() for p in parents),
    }


def log_address(kind: str, creator: bytes, name: str) -> str:
    """Deterministic rendezvous identifier for a log."""
    return hashlib.sha256(kind.encode() + creator + name.encode()).hexdigest()


class Log:
    """One replica's view of a log.

    Invariants maintained under ``self._lock``: the entry index is closed
    under parents, and ``heads`` is the set of indexed entries that no
    indexed entry names as a parent.
    """

    def __init__(self, address: str, identity: Identity, blockstore: BlockStore,
                 quarantine_cap: int = QUARANTINE_CAP) -> None:
        self.address = address
        self.identity = identity
        self.blockstore = blockstore
        self.quarantine_cap = quarantine_cap
        self._entries: dict[Cid, Entry] = {}
        self._heads: set[Cid] = set()
        self._quarantine: OrderedDict[Cid, Entry] = OrderedDict()
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, cid: Cid) -> bool:
        return cid in self._entries

    def get(self, cid: Cid) -> Entry:
        try:
            return self._entries[cid]
        except KeyError:
            raise NotFound(cid) from None

    def entries(self) -> list[Entry]:
        with self._lock:
            return list(self._entries.values())

    def heads(self) -> frozenset[Cid]:
        with self._lock:
            return frozenset(self._heads)

    @property
    def quarantined(self) -> frozenset[Cid]:
        with self._lock:
            return frozenset(self._quarantine)

    def missing_parents(self) -> set[Cid]:
        """Parents referenced by quarantined entries and not yet known."""
        with self._lock:
            return {
                p
                for e in self._quarantine.values()
                for p in e.parents
                if p not in self._entries and p not in self._quarantine
            }

    def _insert(self, entry: Entry) -> None:
        self.blockstore.put(entry.to_bytes())
        self._entries[entry.cid] = entry
        self._heads.difference_update(entry.parents)
        self._heads.add(entry.cid)

    def append(self, payload: bytes) -> Entry:
        with self._lock:
            lamport = 1 + max((self._entries[h].lamport for h in self._heads), default=0)
            entry = Entry.create(self.identity, bytes(payload), lamport, self._heads)
            self._insert(entry)
            return entry

    def join(self, foreign: Iterable[Entry]) -> list[Entry]:
        """Merge foreign entries; returns the newly indexed ones in insertion order.

        The batch is validated before anything is committed: a bad signature
        or clock anywhere raises and leaves the log untouched. Entries whose
        parents are unavailable are held in quarantine and retried on later
        joins.
        """
        with self._lock:
            batch: dict[Cid, Entry] = {}
            for e in foreign:
                if e.cid in self._entries or e.cid in batch:
                    continue
                if e.cid not in self._quarantine and not e.verify():
                    raise BadSignature(e.author, e.cid)
                batch[e.cid] = e
            pool = dict(self._quarantine)
            pool.update(batch)

            plan: list[Entry] = []
            placed: dict[Cid, Entry] = {}
            progress = True
            while progress:
                progress = False
                for cid, e in sorted(pool.items(), key=lambda kv: kv[1].sort_key()):
                    lookup = [self._entries.get(p) or placed.get(p) for p in e.parents]
                    if any(p is None for p in lookup):
                        continue
                    if any(p.lamport >= e.lamport for p in lookup):
                        if cid in batch:
                            raise InvalidEntry(f"entry {cid} clock {e.lamport} not above its parents")
                        # held over from an earlier batch: drop it rather than block later joins
                        del pool[cid]
                        self._quarantine.pop(cid, None)
                        continue
                    plan.append(e)
                    placed[cid] = e
                    del pool[cid]
                    progress = True

            for e in plan:
                self._insert(e)
                self._quarantine.pop(e.cid, None)
            for cid, e in pool.items():
                self._quarantine[cid] = e
            while len(self._quarantine) > self.quarantine_cap:
                self._quarantine.popitem(last=False)
            return plan

    def require_complete(self) -> None:
        missing = self.missing_parents()
        if missing:
            raise MissingParent(missing)

    def traverse(self) -> list[Entry]:
        with self._lock:
            return sorted(self._entries.values(), key=Entry.sort_key)

    @classmethod
    def load(cls, address: str, identity: Identity, blockstore: BlockStore,
             heads: Iterable[Cid]) -> "Log":
        """Rebuild a log by walking parents from ``heads`` through the blockstore."""
        log = cls(address, identity, blockstore)
        log.merge_from_blockstore(heads)
        return log

    def merge_from_blockstore(self, heads: Iterable[Cid]) -> list[Entry]:
        """Join entries reachable from ``heads`` that are stored locally but not
        yet indexed (e.g. appended by another process sharing the directory)."""
        found: dict[Cid, Entry] = {}
        stack = [h for h in heads if h not in self._entries]
        while stack:
            cid = stack.pop()
            if cid in found or cid in self._entries:
                continue
            entry = Entry.from_bytes(self.blockstore.get(cid))
            found[cid] = entry
            stack.extend(entry.parents)
        return self.join(found.values())
