import base64
import json
import random

import pytest

from invchain.blockstore import BlockStore, Cid
from invchain.chain import Chain, PoA
from invchain.oplog import Entry, Identity
from invchain.pipeline import (AnchorAuthError, AnchorRecord, ChainUnavailable, Status,
                               canonical_snapshot_bytes, digest, insert_inventory,
                               parse_snapshot, retry_anchor, verify_inventory)
from invchain.rfidsim import InventorySnapshot, SnapshotRow
from invchain.stores import MalformedOperation, StoreOp, open_store

from helpers import TABLE4

TOKEN = "s3cret"


def table4():
    return parse_snapshot(TABLE4)


@pytest.fixture
def world():
    bs = BlockStore()
    store = open_store("eventlog", "inventory", Identity.from_seed(b"uav"), bs)
    chain = Chain(PoA(), credential=TOKEN)
    contract = chain.deploy_contract()
    chain.advance_to(chain.next_block_time())
    return store, chain, contract


def mined(store, chain, contract, snap=None, **kw):
    rec = insert_inventory(snap or table4(), store, chain, contract, TOKEN, **kw)
    chain.wait_for(rec.tx_hash)
    return rec


def test_table4_canonical_bytes():
    snap = table4()
    assert canonical_snapshot_bytes(snap) == TABLE4
    assert canonical_snapshot_bytes(snap) == canonical_snapshot_bytes(table4())
    assert b'"7.692307692"' not in TABLE4 and b",7.692307692," in TABLE4
    assert TABLE4.startswith(b'{"v":1,"takeoff":"18:14:43,087","total_tags":13,"rows":[[1,')


def test_table4_pct_column():
    printed = [7.692307692, 15.38461538, 23.07692308, 30.76923077, 38.46153846, 46.15384615,
               53.84615385, 61.53846154, 69.23076923, 76.92307692, 84.61538462, 92.30769231, 100]
    rows = table4().rows
    assert len(rows) == 13 and len({r.tag_id for r in rows}) == 13
    for row, want in zip(rows, printed):
        assert abs(100 * row.seq / 13 - want) < 1e-6


def test_canonical_distinguishes_tag_ids():
    a = table4()
    rows = list(a.rows)
    rows[2] = SnapshotRow(3, rows[2].pct_read, rows[2].timestamp, "LOCATE00389999")
    b = InventorySnapshot(a.takeoff, rows, a.total_tags)
    assert canonical_snapshot_bytes(a) != canonical_snapshot_bytes(b)
    assert digest(canonical_snapshot_bytes(a)) != digest(canonical_snapshot_bytes(b))


def test_canonical_rejects_invalid_snapshot():
    bad = InventorySnapshot("00:00:00,000", [SnapshotRow(1, 50.0, "00:00:01,000", "a")], 3)
    with pytest.raises(ValueError):
        canonical_snapshot_bytes(bad)


def test_parse_rejects_other_versions():
    with pytest.raises(ValueError):
        parse_snapshot(TABLE4.replace(b'"v":1', b'"v":2'))


def test_end_to_end_verified(world):
    store, chain, contract = world
    rec = insert_inventory(table4(), store, chain, contract, TOKEN)
    assert rec.status == "anchored" and rec.tx_hash
    assert Cid.from_hex(rec.orbit_hash) in store.log
    receipt = chain.wait_for(rec.tx_hash)
    assert chain.get_data(contract) == (TABLE4.decode(), rec.orbit_hash)
    # insertion time is bracketed by submission and the mined block
    assert rec.anchored_at <= receipt.block_timestamp
    report = verify_inventory(rec, store, chain)
    assert report.status is Status.VERIFIED and report.verified
    assert report.db_data_digest == report.chain_data_digest == digest(TABLE4)
    assert report.orbit_hash_db == report.orbit_hash_chain == rec.orbit_hash


def test_invalid_token_after_append(world):
    store, chain, contract = world
    with pytest.raises(AnchorAuthError) as info:
        insert_inventory(table4(), store, chain, contract, "nope")
    rec = info.value.record
    assert rec.orbit_hash and rec.tx_hash is None and rec.status == "pending-anchor"
    assert len(store.log) == 1
    assert verify_inventory(rec, store, chain).status is Status.MISSING_ANCHOR


def test_insert_needs_eventlog(world):
    _, chain, contract = world
    kv = open_store("keyvalue", "x", Identity.from_seed(b"k"), BlockStore())
    with pytest.raises(MalformedOperation):
        insert_inventory(table4(), kv, chain, contract, TOKEN)


def test_pending_before_mining(world):
    store, chain, contract = world
    rec = insert_inventory(table4(), store, chain, contract, TOKEN)
    assert verify_inventory(rec, store, chain).status is Status.PENDING


def test_unknown_tx_is_missing_anchor(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    rec.tx_hash = "0x" + "0" * 64
    assert verify_inventory(rec, store, chain).status is Status.MISSING_ANCHOR


class DownChain:
    now = 0.0

    def set_data(self, *a):
        raise ChainUnavailable("connection refused")


def test_chain_down_then_retry(world):
    store, chain, contract = world
    rec = insert_inventory(table4(), store, DownChain(), contract, TOKEN)
    assert rec.status == "pending-anchor" and rec.tx_hash is None and "ChainUnavailable" in rec.error
    rec = retry_anchor(rec, store, chain, TOKEN)
    assert rec.status == "anchored" and rec.error is None
    chain.wait_for(rec.tx_hash)
    assert verify_inventory(rec, store, chain).verified
    assert retry_anchor(rec, store, chain, TOKEN) is rec  # already anchored: no resubmission
    assert len(chain.pending) == 0


def _tamper_row(store, rec, row_index, new_tag):
    """Rewrite the stored entry's snapshot in place, keeping the block's name."""
    cid = Cid.from_hex(rec.orbit_hash)
    raw = store.log.blockstore.get_unchecked(cid)
    entry = Entry.from_bytes(raw)
    snap = json.loads(StoreOp.from_bytes(entry.payload).value)
    snap["rows"][row_index][3] = new_tag
    op = StoreOp("ADD", None, json.dumps(snap, separators=(",", ":")))
    d = entry.to_dict()
    d["payload"] = base64.b64encode(op.to_bytes()).decode()
    store.log.blockstore._mem[cid] = json.dumps(d, separators=(",", ":")).encode()


def test_tampered_row_named_in_diff(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    _tamper_row(store, rec, 5, "LOCATE00399999")
    report = verify_inventory(rec, store, chain)
    assert report.status is Status.MISMATCH
    assert "row 6" in report.details and "row 5" not in report.details
    assert "signature" in report.details
    assert report.orbit_hash_db != report.orbit_hash_chain


def test_single_byte_corruptions_all_detected(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    cid = Cid.from_hex(rec.orbit_hash)
    original = store.log.blockstore.get_unchecked(cid)
    rng = random.Random(0)
    for _ in range(200):
        pos = rng.randrange(len(original))
        mutated = bytearray(original)
        mutated[pos] ^= rng.randrange(1, 256)
        store.log.blockstore._mem[cid] = bytes(mutated)
        assert verify_inventory(rec, store, chain).status is Status.MISMATCH
    store.log.blockstore._mem[cid] = original
    assert verify_inventory(rec, store, chain).verified


def test_missing_store_entry(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    del store.log.blockstore._mem[Cid.from_hex(rec.orbit_hash)]
    report = verify_inventory(rec, store, chain)
    assert report.status is Status.MISMATCH and "no entry" in report.details


def test_chain_side_tamper_detected(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    state = chain.contracts[contract]
    state.inventory_data = state.inventory_data.replace("LOCATE00380349", "LOCATE00380348")
    report = verify_inventory(rec, store, chain)
    assert report.status is Status.MISMATCH and "row 1" in report.details


def test_verify_is_idempotent(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    before = (len(store.log), chain.height, len(chain.pending))
    reports = [verify_inventory(rec, store, chain).to_dict() for _ in range(5)]
    assert all(r == reports[0] for r in reports)
    assert (len(store.log), chain.height, len(chain.pending)) == before


def test_superseded_contract_uses_tx_history(world):
    store, chain, contract = world
    first = mined(store, chain, contract)
    rows = [r if r.seq != 13 else SnapshotRow(13, 100.0, r.timestamp, "LOCATE00380999")
            for r in table4().rows]
    second = mined(store, chain, contract, InventorySnapshot("18:14:43,087", rows, 13))
    assert chain.get_data(contract)[1] == second.orbit_hash
    r1 = verify_inventory(first, store, chain)
    assert r1.verified and "superseded" in r1.details
    assert verify_inventory(second, store, chain).verified


def test_hash_only_mode(world):
    store, chain, contract = world
    rec = mined(store, chain, contract, hash_only=True)
    data, h = chain.get_data(contract)
    assert data == "sha256:" + digest(TABLE4) and h == rec.orbit_hash
    assert verify_inventory(rec, store, chain).verified
    _tamper_row(store, rec, 0, "LOCATE00000000")
    assert verify_inventory(rec, store, chain).status is Status.MISMATCH


def test_sequential_inserts(world):
    store, chain, contract = world
    recs = [insert_inventory(table4(), store, chain, contract, TOKEN) for _ in range(200)]
    chain.advance_to(chain.now + 15_000)
    assert len({r.orbit_hash for r in recs}) == 200
    assert all(chain.tx_receipt(r.tx_hash).mined for r in recs)
    assert verify_inventory(recs[-1], store, chain).verified


def test_anchor_record_roundtrip(world):
    store, chain, contract = world
    rec = mined(store, chain, contract)
    assert AnchorRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec
