"""Request/response access to a chain over framed JSON.

Requests are ``{"type": T, ...}`` with T in SET_DATA, GET_DATA, RECEIPT,
STATUS. Replies carry ``"ok": true`` plus results, or ``"ok": false`` with
an ``error`` class name and ``message``.
"""
from __future__ import annotations

import asyncio
import logging
import socket
import time
from typing import Any

from .chain import (AuthError, Chain, ChainError, PayloadTooLarge, Receipt, UnknownContract,
                    UnknownTransaction)
from .clock import ScaledClock
from .pipeline import ChainUnavailable
from .wire import FrameError, decode_body, encode_frame, read_frame, write_frame

log = logging.getLogger(__name__)

REQUEST_TYPES = ("SET_DATA", "GET_DATA", "RECEIPT", "STATUS")
_ERRORS: dict[str, type[ChainError]] = {
    c.__name__: c for c in (AuthError, UnknownContract, PayloadTooLarge, UnknownTransaction, ChainError)
}


def ensure_contract(chain: Chain) -> str:
    """The chain's anchoring contract, deploying and mining one if needed."""
    if chain.contracts:
        return sorted(chain.contracts)[0]
    pending = [t.to for t in chain.pending if t.function == "deploy"]
    address = pending[0] if pending else chain.deploy_contract()
    while address not in chain.contracts:
        nxt = chain.next_block_time()
        if nxt is None:
            raise ChainError("deploy transaction was not scheduled for mining")
        chain.advance_to(nxt)
    return address


class ChainService:
    """Wraps a :class:`Chain` whose time follows ``clock``."""

    def __init__(self, chain: Chain, clock: ScaledClock | None = None) -> None:
        self.chain = chain
        self.contract = ensure_contract(chain)
        self.clock = clock or ScaledClock(start_ms=chain.now)
        self._server: asyncio.base_events.Server | None = None

    def tick(self) -> None:
        self.chain.advance_to(max(self.chain.now, self.clock.now_ms()))

    def handle(self, req: Any) -> dict:
        if not isinstance(req, dict) or req.get("type") not in REQUEST_TYPES:
            return {"ok": False, "error": "BadRequest", "message": "unknown request type"}
        self.tick()
        try:
            return {"ok": True, **self._dispatch(req)}
        except ChainError as exc:
            return {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        except (KeyError, TypeError) as exc:
            return {"ok": False, "error": "BadRequest", "message": f"bad request field: {exc}"}

    def _dispatch(self, req: dict) -> dict:
        t = req["type"]
        if t == "SET_DATA":
            h = self.chain.set_data(req["address"], req["inventory_data"], req["orbit_hash"], req["token"])
            return {"tx_hash": h}
        if t == "GET_DATA":
            data, orbit = self.chain.get_data(req["address"])
            return {"inventory_data": data, "orbit_hash": orbit}
        if t == "RECEIPT":
            return {"receipt": self.chain.tx_receipt(req["tx_hash"]).to_dict()}
        st = self.chain.status()
        st["total_fees"] = str(self.chain.total_fees)
        return {"status": st, "contract": self.contract}

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                try:
                    req = await read_frame(reader)
                except FrameError as exc:
                    await write_frame(writer, {"ok": False, "error": "BadRequest", "message": str(exc)})
                    break
                await write_frame(writer, self.handle(req))
        except asyncio.IncompleteReadError:
            pass
        except ConnectionError as exc:
            log.debug("chain client dropped: %s", exc)
        finally:
            writer.close()

    async def start(self, host: str, port: int) -> int:
        self._server = await asyncio.start_server(self._client, host, port)
        return self._server.sockets[0].getsockname()[1]

    async def ticker(self, period_s: float = 0.05) -> None:
        while True:
            self.tick()
            await asyncio.sleep(period_s)

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


class RemoteChain:
    """Blocking client with the :class:`~invchain.pipeline.ChainHandle` surface."""

    def __init__(self, host: str, port: int, timeout_s: float = 5.0) -> None:
        self.host, self.port, self.timeout_s = host, port, timeout_s

    def call(self, req: dict) -> dict:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout_s) as sock:
                sock.sendall(encode_frame(req))
                reply = _recv_frame(sock)
        except OSError as exc:
            raise ChainUnavailable(f"chain at {self.host}:{self.port} unreachable: {exc}") from exc
        if not reply.get("ok"):
            cls = _ERRORS.get(reply.get("error", ""), ChainError)
            raise cls(reply.get("message", "chain request failed"))
        return reply

    @property
    def now(self) -> float:
        return float(self.status()["now_ms"])

    def status(self) -> dict:
        return self.call({"type": "STATUS"})["status"]

    def contract(self) -> str:
        return self.call({"type": "STATUS"})["contract"]

    def set_data(self, address: str, inventory_data: str, orbit_hash: str, token: str) -> str:
        return self.call({"type": "SET_DATA", "address": address, "inventory_data": inventory_data,
                          "orbit_hash": orbit_hash, "token": token})["tx_hash"]

    def get_data(self, address: str) -> tuple[str, str]:
        r = self.call({"type": "GET_DATA", "address": address})
        return r["inventory_data"], r["orbit_hash"]

    def tx_receipt(self, tx_hash: str) -> Receipt:
        return Receipt.from_dict(self.call({"type": "RECEIPT", "tx_hash": tx_hash})["receipt"])

    def wait_for(self, tx_hash: str, timeout_s: float = 60.0, poll_s: float = 0.05) -> Receipt:
        deadline = time.monotonic() + timeout_s
        while not (r := self.tx_receipt(tx_hash)).mined and time.monotonic() < deadline:
            time.sleep(poll_s)
        return r


def _recv_frame(sock: socket.socket) -> dict:
    head = _recv_exact(sock, 4)
    body = _recv_exact(sock, int.from_bytes(head, "big"))
    return decode_body(body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)
