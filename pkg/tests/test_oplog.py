import base64
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from invchain.blockstore import BlockStore, Cid
from invchain.oplog import (BadSignature, Entry, Identity, InvalidEntry, Log, MissingParent,
                            log_address, verify_signature)
from invchain.wire import canonical_json

from helpers import fresh_join, random_history, random_replica_state, replicas, state_of


@pytest.fixture
def log(alice):
    return Log("addr", alice, BlockStore())


def test_append_on_empty_log(log):
    e = log.append(b"first")
    assert e.lamport == 1 and e.parents == ()
    assert log.heads() == {e.cid}


def test_append_twice_chains(log):
    a = log.append(b"a")
    b = log.append(b"b")
    assert b.lamport == 2 and b.parents == (a.cid,)
    assert log.heads() == {b.cid}


def test_append_persists_entry_to_blockstore(log):
    e = log.append(b"x")
    assert Entry.from_bytes(log.blockstore.get(e.cid)) == e


def test_empty_log_has_no_heads(log):
    assert log.heads() == frozenset()


def test_canonical_serialization_layout(alice):
    e = Entry.create(alice, b"hi", 3, [])
    d = json.loads(e.to_bytes())
    assert list(d) == ["payload", "lamport", "author", "parents", "signature"]
    assert d["payload"] == base64.b64encode(b"hi").decode()
    assert d["author"] == alice.public_key.hex()
    assert e.signing_bytes() == canonical_json(
        {"payload": d["payload"], "lamport": 3, "author": d["author"], "parents": []})
    assert e.cid == Cid.of(e.to_bytes())
    assert b" " not in e.to_bytes()


def test_parents_are_sorted_in_serialization(alice):
    ps = [Cid.of(bytes([i])) for i in range(5)]
    e = Entry.create(alice, b"", 1, reversed(ps))
    assert json.loads(e.to_bytes())["parents"] == sorted(p.hex() for p in ps)


def test_entry_bytes_roundtrip(alice):
    e = Entry.create(alice, b"\x00\xff", 7, [Cid.of(b"p")])
    assert Entry.from_bytes(e.to_bytes()) == e


def test_from_bytes_rejects_non_canonical(alice):
    e = Entry.create(alice, b"x", 1, [])
    spaced = json.dumps(e.to_dict()).encode()
    with pytest.raises(InvalidEntry):
        Entry.from_bytes(spaced)


def test_signature_rejects_100_random_bit_flips(alice):
    e = Entry.create(alice, b"inventory", 4, [Cid.of(b"parent")])
    raw = e.to_bytes()
    rng = random.Random(11)
    rejected = 0
    for _ in range(100):
        pos = rng.randrange(len(raw) * 8)
        flipped = bytearray(raw)
        flipped[pos // 8] ^= 1 << (pos % 8)
        try:
            ok = Entry.from_bytes(bytes(flipped)).verify()
        except InvalidEntry:
            ok = False
        rejected += not ok
    assert rejected == 100


def test_verify_signature_helper(alice, bob):
    sig = alice.sign(b"m")
    assert verify_signature(alice.public_key, sig, b"m")
    assert not verify_signature(bob.public_key, sig, b"m")
    assert not verify_signature(b"short", sig, b"m")


def test_identity_from_seed_is_deterministic(tmp_path):
    assert Identity.from_seed(b"s").public_key == Identity.from_seed(b"s").public_key
    a = Identity.load_or_create(tmp_path / "k")
    b = Identity.load_or_create(tmp_path / "k")
    assert a.public_key == b.public_key
    assert (tmp_path / "k").stat().st_mode & 0o777 == 0o600


def test_log_address_is_deterministic(alice, bob):
    a = log_address("eventlog", alice.public_key, "inventory")
    assert a == log_address("eventlog", alice.public_key, "inventory")
    assert len({a, log_address("feed", alice.public_key, "inventory"),
                log_address("eventlog", bob.public_key, "inventory"),
                log_address("eventlog", alice.public_key, "other")}) == 4


def test_concurrent_appends_join_to_two_heads():
    a, b = replicas(2)
    ea, eb = a.append(b"a"), b.append(b"b")
    a.join(b.entries())
    assert a.heads() == {ea.cid, eb.cid}
    c = a.append(b"merge")
    assert set(c.parents) == {ea.cid, eb.cid} and c.lamport == 2


def test_join_idempotent(log):
    for i in range(5):
        log.append(bytes([i]))
    before = state_of(log)
    assert log.join(log.entries()) == []
    assert state_of(log) == before


def test_bad_signature_rejected_log_unchanged():
    a, b = replicas(2)
    good = b.append(b"good")
    evil = b.append(b"evil")
    forged = Entry(evil.payload, evil.lamport, evil.author, evil.parents,
                   bytes([evil.signature[0] ^ 1]) + evil.signature[1:])
    before = state_of(a)
    with pytest.raises(BadSignature) as err:
        a.join([good, forged])
    assert err.value.author == b.identity.public_key
    assert state_of(a) == before and len(a) == 0


def test_clock_not_above_parent_rejected(alice):
    lg = Log("x", alice, BlockStore())
    p = lg.append(b"p")
    bad = Entry.create(alice, b"c", p.lamport, [p.cid])
    with pytest.raises(InvalidEntry):
        lg.join([bad])


def test_missing_parent_quarantined_then_released():
    a, b = replicas(2)
    e1 = b.append(b"1")
    e2 = b.append(b"2")
    assert a.join([e2]) == []
    assert a.quarantined == {e2.cid}
    assert a.missing_parents() == {e1.cid}
    with pytest.raises(MissingParent):
        a.require_complete()
    joined = a.join([e1])
    assert [e.cid for e in joined] == [e1.cid, e2.cid]
    assert a.quarantined == frozenset() and a.heads() == {e2.cid}


def test_quarantine_is_capped(alice):
    lg = Log("x", alice, BlockStore(), quarantine_cap=5)
    orphans = [Entry.create(alice, bytes([i]), 2, [Cid.of(bytes([i]))]) for i in range(8)]
    lg.join(orphans)
    assert len(lg.quarantined) == 5


def test_invalid_quarantined_entry_does_not_block_later_joins(alice, bob):
    lg = Log("x", alice, BlockStore())
    src = Log("x", bob, BlockStore())
    parent = src.append(b"p")
    parent2 = src.append(b"p2")  # lamport 2
    bad_child = Entry.create(bob, b"c", 2, [parent2.cid])
    lg.join([bad_child])
    assert bad_child.cid in lg.quarantined
    lg.join([parent, parent2])
    assert bad_child.cid not in lg and bad_child.cid not in lg.quarantined
    assert lg.heads() == {parent2.cid}


def test_traverse_single_author_is_insertion_order(log):
    es = [log.append(bytes([i])) for i in range(5)]
    assert log.traverse() == es


def test_traverse_ties_break_by_author():
    a, b = replicas(2)
    ea, eb = a.append(b"x"), b.append(b"y")
    a.join([eb])
    first, second = sorted([ea, eb], key=lambda e: e.author)
    assert a.traverse() == [first, second]


def test_load_rebuilds_from_blockstore(alice):
    bs = BlockStore()
    lg = Log("x", alice, bs)
    for i in range(10):
        lg.append(bytes([i]))
    again = Log.load("x", alice, bs, lg.heads())
    assert [e.cid for e in again.traverse()] == [e.cid for e in lg.traverse()]


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_crdt_laws(history_seed, split_seed):
    pool = random_history(history_seed)
    rng = random.Random(split_seed)
    A, B, C = (random_replica_state(pool, rng) for _ in range(3))
    assert state_of(fresh_join(A, B)) == state_of(fresh_join(B, A))
    assert state_of(fresh_join(fresh_join(A, B).entries(), C)) == \
        state_of(fresh_join(A, fresh_join(B, C).entries()))
    assert state_of(fresh_join(A, A)) == state_of(fresh_join(A))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_join_order_independent_even_for_unclosed_batches(history_seed, order_seed):
    pool = random_history(history_seed)
    items = list(pool.values())
    random.Random(order_seed).shuffle(items)
    cut = len(items) // 2
    one = fresh_join(items[:cut], items[cut:])
    other = fresh_join(items)
    assert state_of(one) == state_of(other)
    assert one.quarantined == frozenset()


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_heads_invariant_and_traversal_topological(seed):
    pool = random_history(seed, n_replicas=4, n_ops=50)
    lg = fresh_join(list(pool.values()))
    referenced = {p for e in lg.entries() for p in e.parents}
    assert lg.heads() == {e.cid for e in lg.entries()} - referenced
    order = {e.cid: i for i, e in enumerate(lg.traverse())}
    assert all(order[p] < order[e.cid] for e in lg.entries() for p in e.parents)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_traversal_serialization_identical_across_replicas(seed):
    pool = random_history(seed, n_replicas=3, n_ops=50)
    items = list(pool.values())
    x = fresh_join(items)
    y = fresh_join(list(reversed(items)))
    assert b"".join(e.to_bytes() for e in x.traverse()) == b"".join(e.to_bytes() for e in y.traverse())
