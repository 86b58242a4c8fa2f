"""Shared builders for multi-replica histories and fixtures."""
import json
import random
from importlib import resources

from invchain.blockstore import BlockStore
from invchain.oplog import Identity, Log

DATA = resources.files("invchain") / "data"
TABLE4 = (DATA / "table4_snapshot.json").read_bytes().strip()


def replicas(n, name="log"):
    return [Log(name, Identity.from_seed(f"r{i}".encode()), BlockStore()) for i in range(n)]


def random_history(seed, n_replicas=3, n_ops=30):
    """Entries produced by replicas that append and occasionally sync."""
    rng = random.Random(seed)
    logs = replicas(n_replicas)
    for i in range(n_ops):
        lg = rng.choice(logs)
        if rng.random() < 0.3:
            other = rng.choice(logs)
            lg.join(other.entries())
        lg.append(f"op{i}".encode())
    pool = {}
    for lg in logs:
        pool.update({e.cid: e for e in lg.entries()})
    return pool


def closure(pool, cids):
    out, stack = {}, list(cids)
    while stack:
        c = stack.pop()
        if c in out:
            continue
        out[c] = pool[c]
        stack.extend(pool[c].parents)
    return out


def random_replica_state(pool, rng, k=3):
    picks = rng.sample(sorted(pool), min(k, len(pool)))
    return list(closure(pool, picks).values())


def fresh_join(*batches):
    lg = Log("log", Identity.from_seed(b"observer"), BlockStore())
    for b in batches:
        lg.join(b)
    return lg


def state_of(lg):
    return frozenset(e.cid for e in lg.entries()), lg.heads()


def oracle_state(kind, entries):
    """Plain fold over all entries sorted (lamport, author, cid)."""
    ordered = sorted(entries, key=lambda e: (e.lamport, e.author, e.cid.digest))
    ops = [json.loads(e.payload) for e in ordered]
    if kind == "counter":
        return sum(o["value"] for o in ops)
    if kind in ("keyvalue", "docs"):
        st = {}
        for o in ops:
            if o["op"] == "PUT":
                st[o["key"]] = o["value"]
            else:
                st.pop(o["key"], None)
        return st
    removed = {o["key"] for o in ops if o["op"] == "REMOVE"}
    return [(e.cid, o["value"]) for e, o in zip(ordered, ops)
            if o["op"] == "ADD" and e.cid.hex() not in removed]


def random_store_op(s, kind, rng, i):
    key = rng.choice("abc")
    if kind == "eventlog":
        s.log_add(i)
    elif kind == "feed":
        live = s.feed_items()
        if live and rng.random() < 0.3:
            s.feed_remove(rng.choice(live)[0])
        else:
            s.feed_add(i)
    elif kind == "keyvalue":
        s.kv_del(key) if rng.random() < 0.2 else s.kv_put(key, i)
    elif kind == "docs":
        s.doc_del(key) if rng.random() < 0.2 else s.doc_put({"_id": key, "n": i})
    else:
        s.counter_inc(rng.randint(1, 5))
