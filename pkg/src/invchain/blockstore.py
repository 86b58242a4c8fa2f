"""Content-addressed immutable block storage.

Blocks are named by the SHA-256 digest of their bytes. Identical payloads
collapse to a single stored block. The on-disk layout fans out by the first
two hex characters of the digest, one file per block::

    root/ab/ab34...ef
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

MAX_BLOCK_SIZE = 1 << 20


class BlockStoreError(Exception):
    pass


class BlockTooLarge(BlockStoreError):
    pass


class NotFound(BlockStoreError, KeyError):
    pass


class CorruptBlock(BlockStoreError):
    def __init__(self, cid: "Cid", message: str = "") -> None:
        self.cid = cid
        super().__init__(message or f"block {cid} content does not match its digest")


class StorageFailure(BlockStoreError):
    pass


@dataclass(frozen=True, order=True)
class Cid:
    digest: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.digest, bytes) or len(self.digest) != 32:
            raise ValueError("Cid digest must be 32 bytes")

    @classmethod
    def of(cls, data: bytes) -> "Cid":
        return cls(hashlib.sha256(data).digest())

    @classmethod
    def from_hex(cls, text: str) -> "Cid":
        if len(text) != 64 or text != text.lower():
            raise ValueError(f"not a lowercase 64-hex cid: {text!r}")
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"Cid({self.hex()[:12]}…)"


ZERO_CID = Cid(bytes(32))


def extract_links(data: bytes) -> tuple[Cid, ...]:
    """Links are the hex cids listed under a top-level ``parents`` key, if the
    payload is a JSON object; anything else has no links."""
    if not data.startswith(b"{"):
        return ()
    try:
        obj = json.loads(data)
    except (ValueError, UnicodeDecodeError):
        return ()
    parents = obj.get("parents") if isinstance(obj, dict) else None
    if not isinstance(parents, list):
        return ()
    links = []
    for p in parents:
        try:
            links.append(Cid.from_hex(p))
        except (TypeError, ValueError):
            continue
    return tuple(links)


@dataclass(frozen=True)
class Block:
    cid: Cid
    data: bytes
    links: tuple[Cid, ...]


class BlockStore:
    """Thread-safe block store, in memory (``root=None``) or on disk."""

    def __init__(self, root: str | os.PathLike | None = None,
                 max_block_size: int = MAX_BLOCK_SIZE) -> None:
        self.root = Path(root) if root is not None else None
        self.max_block_size = max_block_size
        self._mem: dict[Cid, bytes] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, cid: Cid) -> Path:
        h = cid.hex()
        return self.root / h[:2] / h

    def put(self, data: bytes) -> Cid:
        data = bytes(data)
        if len(data) > self.max_block_size:
            raise BlockTooLarge(f"{len(data)} bytes exceeds max block size {self.max_block_size}")
        cid = Cid.of(data)
        with self._lock:
            if self.root is None:
                self._mem.setdefault(cid, data)
                return cid
            path = self._path(cid)
            if path.exists() and Cid.of(path.read_bytes()) == cid:
                return cid
            # absent, or present but damaged: (re)write it
            try:
                path.parent.mkdir(exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except OSError as exc:
                raise StorageFailure(f"cannot write block {cid}: {exc}") from exc
        return cid

    def get_unchecked(self, cid: Cid) -> bytes:
        """Stored bytes without digest verification (used to inspect replicas
        that may have been tampered with)."""
        if self.root is None:
            try:
                return self._mem[cid]
            except KeyError:
                raise NotFound(cid) from None
        try:
            return self._path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFound(cid) from None
        except OSError as exc:
            raise StorageFailure(f"cannot read block {cid}: {exc}") from exc

    def get(self, cid: Cid) -> bytes:
        data = self.get_unchecked(cid)
        if Cid.of(data) != cid:
            raise CorruptBlock(cid)
        return data

    def has(self, cid: Cid) -> bool:
        if self.root is None:
            return cid in self._mem
        return self._path(cid).is_file()

    __contains__ = has

    def block(self, cid: Cid) -> Block:
        data = self.get(cid)
        return Block(cid, data, extract_links(data))

    def is_complete(self, cid: Cid) -> bool:
        """True when ``cid`` and everything reachable through links is stored."""
        seen: set[Cid] = set()
        stack = [cid]
        while stack:
            c = stack.pop()
            if c in seen:
                continue
            seen.add(c)
            if not self.has(c):
                return False
            stack.extend(self.block(c).links)
        return True

    def __iter__(self) -> Iterator[Cid]:
        if self.root is None:
            yield from list(self._mem)
            return
        for sub in sorted(self.root.iterdir()):
            if not sub.is_dir() or len(sub.name) != 2:
                continue
            for f in sorted(sub.iterdir()):
                if len(f.name) == 64 and not f.name.startswith("."):
                    yield Cid.from_hex(f.name)

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def check_integrity(self) -> None:
        """Raise CorruptBlock for the first stored block whose bytes no
        longer hash to its name."""
        for cid in self:
            self.get(cid)
