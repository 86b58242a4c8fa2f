import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from invchain.blockstore import BlockStore, Cid
from invchain.oplog import Identity, Log
from invchain.stores import (KindMismatch, MalformedOperation, StoreKind, StoreOp, open_store,
                             reduce)

from helpers import oracle_state, random_store_op

TABLE4_IDS = [
    "LOCATE00380349", "RFCBDG00011185", "LOCATE00380364", "LOCATE00380341", "LOCATE00380372",
    "LOCATE00380351", "RFCBDG00011188", "LOCATE00380330", "LOCATE00365573", "LOCATE00375358",
    "LOCATE00380359", "LOCATE00380357", "LOCATE00375356",
]


def make(kind, who=b"alice", name="s", creator=None):
    ident = Identity.from_seed(who)
    return open_store(kind, name, ident, BlockStore(), creator)


def pair(kind):
    a = make(kind, b"a")
    b = make(kind, b"b", creator=a.log.identity.public_key)
    assert a.address == b.address
    return a, b


def sync(*stores):
    for s in stores:
        for t in stores:
            if s is not t:
                s.log.join(t.log.entries())


def test_op_payload_schema():
    raw = StoreOp("PUT", "k", {"a": 1}).to_bytes()
    assert raw == b'{"op":"PUT","key":"k","value":{"a":1}}'
    assert StoreOp.from_bytes(raw) == StoreOp("PUT", "k", {"a": 1})


def test_kv_last_writer_wins_sequential():
    s = make("keyvalue")
    s.kv_put("k", "v1")
    s.kv_put("k", "v2")
    assert s.kv_get("k") == "v2"


def test_kv_absent_key_is_not_an_error():
    s = make("keyvalue")
    assert s.kv_get("missing") is None
    assert s.kv_get("missing", "dflt") == "dflt"


def test_kv_delete():
    s = make("keyvalue")
    s.kv_put("k", 1)
    s.kv_del("k")
    assert s.kv_get("k") is None


def test_concurrent_puts_converge_to_traversal_max():
    a, b = pair("keyvalue")
    ca = a.kv_put("k", "from-a")
    cb = b.kv_put("k", "from-b")
    sync(a, b)
    ea, eb = a.log.get(ca), a.log.get(cb)
    winner = "from-a" if ea.sort_key() > eb.sort_key() else "from-b"
    assert a.kv_get("k") == b.kv_get("k") == winner


def test_counter_all_interleavings_of_three_incs():
    a, b = pair("counter")
    ops = [a.log.get(a.counter_inc(1)), a.log.get(a.counter_inc(1)), b.log.get(b.counter_inc(1))]
    for perm in itertools.permutations(ops):
        lg = Log(a.address, Identity.from_seed(b"obs"), BlockStore())
        for e in perm:
            lg.join([e])
        assert reduce(StoreKind.COUNTER, lg) == 3


def test_counter_rejects_non_positive():
    s = make("counter")
    for bad in (0, -1, 1.5, True):
        with pytest.raises(MalformedOperation):
            s.counter_inc(bad)


def test_counter_merge_never_decreases():
    a, b = pair("counter")
    a.counter_inc(5)
    b.counter_inc(2)
    before = a.counter_value()
    sync(a, b)
    assert a.counter_value() >= before and a.counter_value() == 7


def test_feed_remove_tombstones_add():
    s = make("feed")
    cid = s.feed_add("x")
    s.feed_remove(cid)
    assert s.feed_items() == []


def test_feed_remove_targets_entry_not_value():
    s = make("feed")
    first = s.feed_add("dup")
    second = s.feed_add("dup")
    s.feed_remove(first)
    assert s.feed_items() == [(second, "dup")]


def test_feed_remove_unknown_target_rejected():
    s = make("feed")
    with pytest.raises(MalformedOperation):
        s.feed_remove(Cid.of(b"nothing"))


def test_eventlog_keeps_everything_in_order():
    s = make("eventlog")
    cids = [s.log_add(i) for i in range(4)]
    assert s.log_items() == list(zip(cids, range(4)))


def test_doc_roundtrip():
    s = make("docs")
    doc = {"_id": "tag1", "material": "wood"}
    s.doc_put(doc)
    assert s.doc_get("tag1") == doc


def test_doc_needs_id():
    with pytest.raises(MalformedOperation):
        make("docs").doc_put({"material": "wood"})


def test_doc_query_table4_prefix():
    s = make("docs")
    for tid in TABLE4_IDS:
        s.doc_put({"_id": tid})
    hits = s.doc_query("LOCATE")
    assert len(hits) == 11 and all(d["_id"].startswith("LOCATE") for d in hits)
    assert len(s.doc_query("RFCBDG")) == 2


def test_kind_mismatch():
    with pytest.raises(KindMismatch):
        make("eventlog").kv_put("k", 1)


def test_illegal_op_in_foreign_entry_names_cid():
    s = make("eventlog")
    lg = Log(s.address, Identity.from_seed(b"mallory"), BlockStore())
    bad = lg.append(StoreOp("PUT", "k", 1).to_bytes())
    s.log.join([bad])
    with pytest.raises(MalformedOperation) as err:
        s.log_items()
    assert err.value.cid == bad.cid


def test_non_json_payload_is_malformed():
    s = make("keyvalue")
    s.log.append(b"\xff not json")
    with pytest.raises(MalformedOperation):
        s.kv_get("k")


def test_state_is_deterministic_across_equal_logs():
    a, b = pair("docs")
    a.doc_put({"_id": "x", "v": 1})
    b.doc_put({"_id": "x", "v": 2})
    b.doc_put({"_id": "y", "v": 3})
    sync(a, b)
    assert json.dumps(a.state(), sort_keys=True) == json.dumps(b.state(), sort_keys=True)


@settings(max_examples=30)
@given(st.sampled_from(["eventlog", "feed", "keyvalue", "docs", "counter"]), st.integers(0, 10**6))
def test_replicas_match_single_replica_oracle(kind, seed):
    rng = random.Random(seed)
    a = make(kind, b"r0")
    rs = [a] + [make(kind, f"r{i}".encode(), creator=a.log.identity.public_key) for i in (1, 2, 3)]
    for i in range(40):
        s = rng.choice(rs)
        if rng.random() < 0.25:
            s.log.join(rng.choice(rs).log.entries())
        random_store_op(s, kind, rng, i)
    sync(*rs)
    everything = {e.cid: e for s in rs for e in s.log.entries()}
    expected = oracle_state(kind, everything.values())
    assert all(s.state() == expected for s in rs)


