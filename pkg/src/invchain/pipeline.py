"""Inventory insertion and verification workflows.

Insertion appends the canonical snapshot to an eventlog store, takes the
returned entry cid as the acknowledgement ("orbit hash"), then anchors the
snapshot string and that hash on chain through ``setData``. Verification
re-reads both sides and compares canonical bytes.

Canonical snapshot JSON (version 1)::

    {"v":1,"takeoff":"18:14:43,087","total_tags":13,
     "rows":[[1,7.692307692,"18:14:46,058","LOCATE00380349"],...]}

``pct`` is always rendered with exactly nine fractional digits.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Protocol

from .blockstore import Cid, NotFound, StorageFailure
from .chain import AuthError, ChainError, Receipt, UnknownTransaction
from .oplog import Entry, InvalidEntry
from .rfidsim import InventorySnapshot, SnapshotRow
from .stores import MalformedOperation, Store, StoreKind, StoreOp

SNAPSHOT_VERSION = 1
HASH_ONLY_PREFIX = "sha256:"


class ChainUnavailable(ChainError):
    """The chain endpoint could not be reached."""


class ChainHandle(Protocol):
    now: float

    def set_data(self, address: str, inventory_data: str, orbit_hash: str, token: str) -> str: ...
    def get_data(self, address: str) -> tuple[str, str]: ...
    def tx_receipt(self, tx_hash: str) -> Receipt: ...


def canonical_snapshot_bytes(snapshot: InventorySnapshot) -> bytes:
    snapshot.validate()
    rows = ",".join(
        "[%d,%.9f,%s,%s]" % (r.seq, r.pct_read, json.dumps(r.timestamp), json.dumps(r.tag_id, ensure_ascii=False))
        for r in snapshot.rows
    )
    text = '{"v":%d,"takeoff":%s,"total_tags":%d,"rows":[%s]}' % (
        SNAPSHOT_VERSION, json.dumps(snapshot.takeoff), snapshot.total_tags, rows)
    return text.encode("utf-8")


def snapshot_from_obj(d: dict) -> InventorySnapshot:
    if d.get("v", SNAPSHOT_VERSION) != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {d.get('v')}")
    rows = [SnapshotRow(int(r[0]), float(r[1]), str(r[2]), str(r[3])) for r in d["rows"]]
    snap = InventorySnapshot(d["takeoff"], rows, int(d["total_tags"]))
    snap.validate()
    return snap


def parse_snapshot(data: bytes | str) -> InventorySnapshot:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return snapshot_from_obj(json.loads(data))


def digest(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass
class AnchorRecord:
    snapshot_id: str
    orbit_hash: str
    tx_hash: str | None
    anchored_at: float | None
    contract: str
    status: str = "anchored"  # or "pending-anchor"
    hash_only: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorRecord":
        return cls(**d)


class InsertError(Exception):
    def __init__(self, message: str, record: AnchorRecord) -> None:
        self.record = record
        super().__init__(message)


class AnchorAuthError(InsertError, AuthError):
    """Token rejected; the store append already happened (at-least-once)."""


class Status(str, enum.Enum):
    VERIFIED = "Verified"
    MISMATCH = "Mismatch"
    MISSING_ANCHOR = "MissingAnchor"
    PENDING = "Pending"


@dataclass
class VerificationReport:
    status: Status
    db_data_digest: str | None = None
    chain_data_digest: str | None = None
    orbit_hash_db: str | None = None
    orbit_hash_chain: str | None = None
    details: str = ""

    @property
    def verified(self) -> bool:
        return self.status is Status.VERIFIED

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = self.status.value
        return d


def _anchor_payload(data: str, hash_only: bool) -> str:
    return HASH_ONLY_PREFIX + digest(data) if hash_only else data


def insert_inventory(snapshot: InventorySnapshot, store: Store, chain: ChainHandle,
                     contract: str, token: str, hash_only: bool = False) -> AnchorRecord:
    """Append to the store, then anchor on chain.

    Raises :class:`AnchorAuthError` on a rejected token. An unreachable chain
    yields a record with status ``pending-anchor`` for :func:`retry_anchor`.
    """
    if store.kind is not StoreKind.EVENTLOG:
        raise MalformedOperation(None, "inventory snapshots go to an eventlog store")
    data = canonical_snapshot_bytes(snapshot).decode("utf-8")
    try:
        orbit_hash = store.log_add(data).hex()
    except (OSError, StorageFailure) as exc:
        raise StorageFailure(f"store append failed: {exc}") from exc
    record = AnchorRecord(digest(data)[:16], orbit_hash, None, None, contract, "pending-anchor",
                          hash_only)
    return _anchor(record, data, chain, token)


def _anchor(record: AnchorRecord, data: str, chain: ChainHandle, token: str) -> AnchorRecord:
    try:
        record.anchored_at = chain.now
        record.tx_hash = chain.set_data(record.contract, _anchor_payload(data, record.hash_only),
                                        record.orbit_hash, token)
    except AuthError as exc:
        record.anchored_at = None
        record.error = f"AuthError: {exc}"
        raise AnchorAuthError(str(exc), record) from exc
    except ChainUnavailable as exc:
        record.anchored_at = None
        record.error = f"ChainUnavailable: {exc}"
        return record
    record.status = "anchored"
    record.error = None
    return record


def retry_anchor(record: AnchorRecord, store: Store, chain: ChainHandle, token: str) -> AnchorRecord:
    """Re-submit a pending-anchor record using the copy held by the store."""
    if record.status == "anchored":
        return record
    data = _stored_entry(store, Cid.from_hex(record.orbit_hash))[2]
    return _anchor(record, data, chain, token)


def _stored_entry(store: Store, cid: Cid) -> tuple[bytes, Entry, str]:
    """Raw stored entry bytes, the parsed entry, and its snapshot string.

    Reads without digest checks: verification must be able to look at a
    replica's copy even when it no longer matches its name.
    """
    raw = store.log.blockstore.get_unchecked(cid)
    entry = Entry.from_bytes(raw)
    op = StoreOp.from_bytes(entry.payload)
    if op.op != "ADD" or not isinstance(op.value, str):
        raise MalformedOperation(cid, "entry is not a snapshot ADD")
    return raw, entry, op.value


def _row_diff(db: str, chain: str) -> str:
    try:
        a, b = json.loads(db), json.loads(chain)
    except ValueError:
        return ""
    if not (isinstance(a, dict) and isinstance(b, dict)):
        return ""
    notes = [f"field {k!r} differs" for k in ("v", "takeoff", "total_tags") if a.get(k) != b.get(k)]
    ra, rb = a.get("rows") or [], b.get("rows") or []
    for i in range(max(len(ra), len(rb))):
        x = ra[i] if i < len(ra) else None
        y = rb[i] if i < len(rb) else None
        if x != y:
            notes.append(f"row {i + 1}: store {x} vs chain {y}")
    return "; ".join(notes)


def verify_inventory(record: AnchorRecord, store: Store, chain: ChainHandle) -> VerificationReport:
    """Compare the store's copy of an anchored snapshot with the chain's.

    Read-only. Verified requires byte-equal canonical data and equal orbit
    hashes, where the store-side hash is recomputed from the stored bytes.
    """
    if not record.tx_hash:
        return VerificationReport(Status.MISSING_ANCHOR, orbit_hash_db=record.orbit_hash,
                                  details="record was never anchored on chain")
    try:
        receipt = chain.tx_receipt(record.tx_hash)
    except UnknownTransaction:
        return VerificationReport(Status.MISSING_ANCHOR, orbit_hash_db=record.orbit_hash,
                                  details=f"chain has no transaction {record.tx_hash}")
    if not receipt.mined:
        return VerificationReport(Status.PENDING, orbit_hash_db=record.orbit_hash,
                                  details="anchoring transaction not yet mined")

    chain_data, chain_hash = chain.get_data(record.contract)
    note = ""
    if chain_hash != record.orbit_hash and receipt.function == "setData":
        # contract state was overwritten by a later anchor; use this tx's own calldata
        chain_data, chain_hash = receipt.args
        note = "contract superseded by a later anchor; compared against the anchoring transaction. "

    cid = Cid.from_hex(record.orbit_hash)
    try:
        raw, entry, db_data = _stored_entry(store, cid)
    except NotFound:
        return VerificationReport(Status.MISMATCH, None, digest(chain_data), None, chain_hash,
                                  note + "store has no entry for the anchored orbit hash")
    except (InvalidEntry, MalformedOperation) as exc:
        raw = store.log.blockstore.get_unchecked(cid)
        return VerificationReport(Status.MISMATCH, None, digest(chain_data), Cid.of(raw).hex(),
                                  chain_hash, note + f"stored entry no longer parses: {exc}")

    db_hash = Cid.of(raw).hex()
    if record.hash_only:
        db_side = HASH_ONLY_PREFIX + digest(db_data)
        chain_digest = chain_data[len(HASH_ONLY_PREFIX):] if chain_data.startswith(HASH_ONLY_PREFIX) else digest(chain_data)
    else:
        db_side = db_data
        chain_digest = digest(chain_data)
    report = VerificationReport(Status.MISMATCH, digest(db_data), chain_digest, db_hash, chain_hash)
    problems = []
    if db_side.encode("utf-8") != chain_data.encode("utf-8"):
        diff = "" if record.hash_only else _row_diff(db_data, chain_data)
        problems.append("inventory data differs" + (f" ({diff})" if diff else ""))
    if not entry.verify():
        problems.append("stored entry signature does not verify")
    if db_hash != chain_hash:
        problems.append(f"stored entry hashes to {db_hash[:16]}…, chain anchors {chain_hash[:16]}…")
    if not problems:
        report.status = Status.VERIFIED
        report.details = note + "store copy matches the on-chain anchor"
    else:
        report.details = note + "; ".join(problems)
    return report
