"""Persistent node state inside a data directory.

Layout::

    blocks/ab/abcd...       content-addressed blocks
    logs/<address>.json     {"kind", "name", "creator", "heads"} per store
    anchors.jsonl           one AnchorRecord per line
    identity.key            hex Ed25519 seed

Several processes may share a directory (a running node and CLI clients).
Blocks are written atomically and never change; each heads file is updated
under a file lock by read-merge-write, so concurrent appends are not lost.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

from filelock import FileLock

from .blockstore import BlockStore, BlockStoreError, Cid
from .oplog import Entry, Identity, LogError
from .pipeline import AnchorRecord
from .stores import Store, StoreKind, open_store

log = logging.getLogger(__name__)


class NodeState:
    def __init__(self, data_dir: str | Path, identity_file: str | Path | None = None) -> None:
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.blockstore = BlockStore(self.root / "blocks")
        self.identity = Identity.load_or_create(identity_file or self.root / "identity.key")
        (self.root / "logs").mkdir(exist_ok=True)
        self._meta: dict[str, dict] = {}

    def heads_path(self, address: str) -> Path:
        return self.root / "logs" / f"{address}.json"

    def _lock(self, address: str) -> FileLock:
        return FileLock(str(self.heads_path(address)) + ".lock", timeout=30)

    def _read_heads(self, address: str) -> list[Cid]:
        p = self.heads_path(address)
        if not p.exists():
            return []
        return [Cid.from_hex(h) for h in json.loads(p.read_text(encoding="utf-8"))["heads"]]

    def open_store(self, kind: StoreKind | str, name: str, creator: bytes | None = None,
                   read_only: bool = False) -> Store:
        """Open a store and load its saved heads.

        ``read_only`` never rewrites the heads file and loads what it can from
        a damaged directory (entries behind an unreadable block are skipped).
        """
        store = open_store(kind, name, self.identity, self.blockstore, creator)
        self._meta[store.address] = {"kind": store.kind.value, "name": name,
                                     "creator": (creator or self.identity.public_key).hex()}
        if not read_only:
            self.sync(store)
            return store
        for head in self._read_heads(store.address):
            try:
                store.log.merge_from_blockstore([head])
            except (BlockStoreError, LogError) as exc:
                log.warning("skipping unreadable history under %s: %s", head, exc)
        return store

    def _write_heads(self, store: Store) -> None:
        p = self.heads_path(store.address)
        doc = dict(self._meta[store.address], heads=sorted(c.hex() for c in store.log.heads()))
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        tmp.replace(p)

    def sync(self, store: Store) -> list[Entry]:
        """Merge heads saved by other processes into ``store`` and save the union.

        Returns the entries newly picked up from disk.
        """
        with self._lock(store.address):
            new = store.log.merge_from_blockstore(self._read_heads(store.address))
            self._write_heads(store)
        return new

    def known_logs(self) -> dict[str, dict]:
        out = {}
        for p in sorted((self.root / "logs").glob("*.json")):
            out[p.stem] = json.loads(p.read_text(encoding="utf-8"))
        return out

    # anchors
    @property
    def anchors_path(self) -> Path:
        return self.root / "anchors.jsonl"

    def record_anchor(self, record: AnchorRecord) -> None:
        with FileLock(str(self.anchors_path) + ".lock", timeout=30):
            with self.anchors_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), separators=(",", ":")) + "\n")

    def anchors(self) -> list[AnchorRecord]:
        if not self.anchors_path.exists():
            return []
        lines = self.anchors_path.read_text(encoding="utf-8").splitlines()
        return [AnchorRecord.from_dict(json.loads(x)) for x in lines if x.strip()]

