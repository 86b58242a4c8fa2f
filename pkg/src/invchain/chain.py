"""Simulated smart-contract chain for anchoring inventory snapshots.

A single-writer state machine: transactions enter a pending pool, a minting
policy turns them into blocks, and mined ``setData`` calls update the one
anchoring contract. Proof-of-authority mints on a fixed cadence; the
proof-of-work stand-in assigns each transaction a confirmation delay drawn
from a sampler at submission and emits a block whenever some are due.

Time is simulated milliseconds; the chain never reads the wall clock.
"""
from __future__ import annotations

import hashlib
import heapq
import hmac
import json
import math
import random
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable

from .wire import canonical_json

FEE = Decimal("0.03521346")
ZERO_HASH = "00" * 32
CALLDATA_CAP = 128 * 1024
DEFAULT_SENDER = "0x" + "5de0778cd852a6" + "0" * 26


class ChainError(Exception):
    pass


class AuthError(ChainError):
    pass


class PayloadTooLarge(ChainError):
    pass


class UnknownContract(ChainError):
    pass


class UnknownTransaction(ChainError):
    pass


@dataclass(frozen=True)
class PoA:
    interval_ms: float = 15_000.0

    def __post_init__(self) -> None:
        if self.interval_ms <= 0:
            raise ValueError("PoA interval must be positive")

    def to_dict(self) -> dict:
        return {"kind": "poa", "interval_ms": self.interval_ms}


@dataclass(frozen=True)
class PoW:
    """Per-transaction confirmation latency sampler.

    ``lognormal``: median ``median_ms``, log-sd ``sigma``, clipped to
    ``[lo_ms, hi_ms]``. ``uniform``: uniform on ``[lo_ms, hi_ms]``.
    """

    lo_ms: float = 2_000.0
    hi_ms: float = 80_000.0
    shape: str = "lognormal"
    median_ms: float = 20_000.0
    sigma: float = 0.9

    def __post_init__(self) -> None:
        if not 0 < self.lo_ms < self.hi_ms:
            raise ValueError("PoW bounds need 0 < lo < hi")
        if self.shape not in ("lognormal", "uniform"):
            raise ValueError(f"unknown PoW sampler shape {self.shape!r}")

    def sample(self, rng: random.Random) -> float:
        if self.shape == "uniform":
            return rng.uniform(self.lo_ms, self.hi_ms)
        x = rng.lognormvariate(math.log(self.median_ms), self.sigma)
        return min(max(x, self.lo_ms), self.hi_ms)

    def to_dict(self) -> dict:
        return {"kind": "pow", "lo_ms": self.lo_ms, "hi_ms": self.hi_ms, "shape": self.shape,
                "median_ms": self.median_ms, "sigma": self.sigma}


MintPolicy = PoA | PoW


def policy_from_dict(d: dict) -> MintPolicy:
    d = dict(d)
    kind = d.pop("kind", "poa")
    if kind == "poa":
        return PoA(**d)
    if kind == "pow":
        return PoW(**d)
    raise ValueError(f"unknown mint policy {kind!r}")


def _hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


@dataclass(frozen=True)
class Transaction:
    sender: str
    to: str
    function: str
    args: tuple[str, ...]
    fee: Decimal
    submitted_at: float
    nonce: int

    def to_dict(self) -> dict:
        return {
            "from": self.sender,
            "to": self.to,
            "function": self.function,
            "args": list(self.args),
            "fee": str(self.fee),
            "submitted_at": float(self.submitted_at),
            "nonce": self.nonce,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(d["from"], d["to"], d["function"], tuple(d["args"]), Decimal(d["fee"]),
                   float(d["submitted_at"]), int(d["nonce"]))

    @property
    def tx_hash(self) -> str:
        return "0x" + _hash(self.to_dict())


@dataclass(frozen=True)
class ChainBlock:
    number: int
    parent: str
    timestamp: float
    txs: tuple[Transaction, ...]

    @property
    def hash(self) -> str:
        return _hash({
            "number": self.number,
            "parent": self.parent,
            "timestamp": self.timestamp,
            "txs": [t.tx_hash for t in self.txs],
        })


@dataclass
class ContractState:
    address: str
    inventory_data: str = ""
    orbit_hash: str = ""
    last_update_block: int = -1


@dataclass(frozen=True)
class Receipt:
    tx_hash: str
    status: str  # "pending" | "mined"
    submitted_at: float
    block_number: int | None = None
    block_timestamp: float | None = None
    latency_ms: float | None = None
    function: str = ""
    args: tuple[str, ...] = ()

    @property
    def mined(self) -> bool:
        return self.status == "mined"

    def to_dict(self) -> dict:
        return {
            "tx_hash": self.tx_hash,
            "status": self.status,
            "submitted_at": float(self.submitted_at),
            "block_number": self.block_number,
            "block_timestamp": self.block_timestamp,
            "latency_ms": self.latency_ms,
            "function": self.function,
            "args": list(self.args),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Receipt":
        d = dict(d)
        d["args"] = tuple(d.get("args", ()))
        return cls(**d)


class Chain:
    """The chain state machine.

    ``credential`` is the shared secret that ``set_data`` callers must
    present; only its SHA-256 is kept (or pass ``credential_sha256``
    directly). Passing ``journal`` appends every submission and block to a
    JSON-lines file from which :meth:`open` rebuilds identical state.
    """

    def __init__(self, policy: MintPolicy | None = None, seed: int = 0, credential: str = "",
                 fee: Decimal = FEE, calldata_cap: int = CALLDATA_CAP,
                 journal: str | Path | None = None, credential_sha256: str | None = None) -> None:
        self.policy = policy or PoA()
        self.seed = seed
        self.credential_sha256 = credential_sha256 or hashlib.sha256(credential.encode()).hexdigest()
        self.fee = Decimal(fee)
        self.calldata_cap = calldata_cap
        self.now = 0.0
        self.blocks: list[ChainBlock] = [ChainBlock(0, ZERO_HASH, 0.0, ())]
        self.contracts: dict[str, ContractState] = {}
        self.fees_paid: dict[str, Decimal] = {}
        self._pending: dict[str, Transaction] = {}
        self._due: dict[str, float] = {}
        self._due_heap: list[tuple[float, float, str]] = []
        self._txs: dict[str, Transaction] = {}
        self._mined_in: dict[str, int] = {}
        self._nonces: dict[str, int] = {}
        self._journal: Path | None = None
        if journal is not None:
            self._attach_journal(Path(journal))

    # persistence
    def _attach_journal(self, path: Path) -> None:
        self._journal = path
        if not path.exists() or path.stat().st_size == 0:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._write({"event": "genesis", "policy": self.policy.to_dict(), "seed": self.seed,
                         "fee": str(self.fee), "calldata_cap": self.calldata_cap,
                         "credential_sha256": self.credential_sha256})

    def _write(self, record: dict) -> None:
        if self._journal is not None:
            with self._journal.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    @classmethod
    def open(cls, path: str | Path, credential: str = "",
             policy: MintPolicy | None = None, seed: int = 0,
             credential_sha256: str | None = None) -> "Chain":
        """Replay a journal, or start one with ``policy`` if it does not exist.

        An existing journal's recorded credential digest takes precedence
        over the one passed in.
        """
        path = Path(path)
        if not path.exists() or path.stat().st_size == 0:
            return cls(policy, seed=seed, credential=credential, journal=path,
                       credential_sha256=credential_sha256)
        lines = [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]
        head = lines[0]
        if head.get("event") != "genesis":
            raise ChainError(f"{path}: journal does not start with a genesis record")
        chain = cls(policy_from_dict(head["policy"]), seed=head["seed"], credential=credential,
                    fee=Decimal(head["fee"]), calldata_cap=head["calldata_cap"],
                    credential_sha256=head.get("credential_sha256", credential_sha256))
        for rec in lines[1:]:
            ev = rec["event"]
            if ev == "submit":
                tx = Transaction.from_dict(rec["tx"])
                chain._enqueue(tx, rec["due"])
            elif ev == "block":
                chain._seal(rec["timestamp"], [chain._pending[h] for h in rec["txs"]])
                if chain.blocks[-1].hash != rec["hash"]:
                    raise ChainError(f"{path}: block {rec['number']} hash mismatch on replay")
            elif ev == "clock":
                chain.now = max(chain.now, rec["now"])
        chain._journal = path
        return chain

    # submission
    def _next_nonce(self, sender: str) -> int:
        n = self._nonces.get(sender, 0)
        self._nonces[sender] = n + 1
        return n

    def _enqueue(self, tx: Transaction, due: float | None) -> None:
        h = tx.tx_hash
        self._nonces[tx.sender] = max(self._nonces.get(tx.sender, 0), tx.nonce + 1)
        self._pending[h] = tx
        self._txs[h] = tx
        if due is not None:
            self._due[h] = due
            heapq.heappush(self._due_heap, (due, tx.submitted_at, h))

    def _submit(self, sender: str, to: str, function: str, args: tuple[str, ...]) -> str:
        tx = Transaction(sender, to, function, args, self.fee, self.now, self._next_nonce(sender))
        h = tx.tx_hash
        due = None
        if isinstance(self.policy, PoW):
            # per-tx stream keeps replay independent of submission interleaving
            due = self.now + self.policy.sample(random.Random(f"{self.seed}:{h}"))
        self._enqueue(tx, due)
        self._write({"event": "submit", "tx": tx.to_dict(), "due": due})
        return h

    def deploy_contract(self, deployer: str = DEFAULT_SENDER) -> str:
        nonce = self._nonces.get(deployer, 0)
        address = "0x" + hashlib.sha256(f"{deployer}:{nonce}".encode()).hexdigest()[:40]
        self._submit(deployer, address, "deploy", ())
        return address

    def set_data(self, address: str, inventory_data: str, orbit_hash: str, token: str,
                 sender: str = DEFAULT_SENDER) -> str:
        offered = hashlib.sha256(token.encode()).hexdigest()
        if not hmac.compare_digest(offered, self.credential_sha256):
            raise AuthError("invalid authentication token")
        if address not in self.contracts:
            raise UnknownContract(address)
        size = len(inventory_data.encode("utf-8")) + len(orbit_hash.encode("utf-8"))
        if size > self.calldata_cap:
            raise PayloadTooLarge(f"calldata of {size} bytes exceeds cap {self.calldata_cap}")
        return self._submit(sender, address, "setData", (inventory_data, orbit_hash))

    # reads
    def get_data(self, address: str) -> tuple[str, str]:
        try:
            c = self.contracts[address]
        except KeyError:
            raise UnknownContract(address) from None
        return c.inventory_data, c.orbit_hash

    def tx_receipt(self, tx_hash: str) -> Receipt:
        tx = self._txs.get(tx_hash)
        if tx is None:
            raise UnknownTransaction(tx_hash)
        n = self._mined_in.get(tx_hash)
        if n is None:
            return Receipt(tx_hash, "pending", tx.submitted_at, function=tx.function, args=tx.args)
        ts = self.blocks[n].timestamp
        return Receipt(tx_hash, "mined", tx.submitted_at, n, ts, ts - tx.submitted_at,
                       tx.function, tx.args)

    @property
    def pending(self) -> list[Transaction]:
        return list(self._pending.values())

    @property
    def height(self) -> int:
        return self.blocks[-1].number

    @property
    def total_fees(self) -> Decimal:
        return sum(self.fees_paid.values(), Decimal(0))

    def status(self) -> dict:
        return {
            "height": self.height,
            "now_ms": self.now,
            "head": self.blocks[-1].hash,
            "pending": len(self._pending),
            "contracts": sorted(self.contracts),
            "policy": self.policy.to_dict(),
        }

    # minting
    def _apply(self, tx: Transaction, number: int) -> None:
        if tx.function == "deploy":
            self.contracts.setdefault(tx.to, ContractState(tx.to))
        elif tx.function == "setData":
            c = self.contracts[tx.to]
            c.inventory_data, c.orbit_hash = tx.args
            c.last_update_block = number
        self.fees_paid[tx.sender] = self.fees_paid.get(tx.sender, Decimal(0)) + tx.fee

    def _seal(self, timestamp: float, txs: list[Transaction]) -> ChainBlock:
        prev = self.blocks[-1]
        block = ChainBlock(prev.number + 1, prev.hash, max(timestamp, prev.timestamp), tuple(txs))
        self.blocks.append(block)
        for tx in txs:
            h = tx.tx_hash
            del self._pending[h]
            self._due.pop(h, None)
            self._mined_in[h] = block.number
            self._apply(tx, block.number)
        self.now = max(self.now, block.timestamp)
        return block

    def next_block_time(self) -> float | None:
        """When the next block is due, or None if the policy has nothing to mint."""
        if isinstance(self.policy, PoA):
            return self.blocks[-1].timestamp + self.policy.interval_ms
        heap = self._due_heap
        while heap and heap[0][2] not in self._due:
            heapq.heappop(heap)
        return heap[0][0] if heap else None

    def mint_step(self, now: float) -> ChainBlock | None:
        """Emit at most one block at or before ``now``.

        PoA seals the scheduled block with every tx submitted by then. PoW
        seals every tx whose confirmation time has arrived into one block
        stamped ``now``; empty PoW blocks are suppressed.
        """
        due_at = self.next_block_time()
        if due_at is None or due_at > now:
            return None
        if isinstance(self.policy, PoA):
            stamp = due_at
            txs = [t for t in self._pending.values() if t.submitted_at <= due_at]
        else:
            stamp = now
            txs = []
            heap = self._due_heap
            while heap and heap[0][0] <= now:
                _, _, h = heapq.heappop(heap)
                if h in self._due:
                    txs.append(self._pending[h])
        block = self._seal(stamp, txs)
        self._write({"event": "block", "number": block.number, "timestamp": block.timestamp,
                     "txs": [t.tx_hash for t in block.txs], "hash": block.hash})
        return block

    def advance_to(self, t_ms: float) -> list[ChainBlock]:
        """Mint every block due up to ``t_ms``, each at its exact due time."""
        out = []
        while (nxt := self.next_block_time()) is not None and nxt <= t_ms:
            out.append(self.mint_step(nxt))
        if t_ms > self.now:
            self.now = t_ms
            self._write({"event": "clock", "now": t_ms})
        return out

    def wait_for(self, tx_hash: str, limit_ms: float = 3_600_000.0) -> Receipt:
        """Advance virtual time until ``tx_hash`` is mined."""
        deadline = self.now + limit_ms
        while not (r := self.tx_receipt(tx_hash)).mined:
            nxt = self.next_block_time()
            if nxt is None or nxt > deadline:
                break
            self.advance_to(nxt)
        return r

    def replay(self) -> dict[str, ContractState]:
        """Recompute contract states from the mined blocks alone."""
        states: dict[str, ContractState] = {}
        for block in self.blocks[1:]:
            for tx in block.txs:
                if tx.function == "deploy":
                    states.setdefault(tx.to, ContractState(tx.to))
                elif tx.function == "setData":
                    c = states[tx.to]
                    c.inventory_data, c.orbit_hash = tx.args
                    c.last_update_block = block.number
        return states


def mined_latencies(chain: Chain, tx_hashes: Iterable[str]) -> list[float]:
    return [r.latency_ms for h in tx_hashes if (r := chain.tx_receipt(h)).mined]
