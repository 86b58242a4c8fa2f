"""Replication over TCP.

Each connection, inbound or outbound, carries framed swarm messages in both
directions. A node re-announces the heads of every replicated log to every
connection each announce period and redials bootstrap peers that drop.
"""
from __future__ import annotations

import asyncio
import itertools
import logging
from typing import Callable

from .stores import Store
from .swarm import Message, Replicator
from .wire import FrameError, read_frame, write_frame

log = logging.getLogger(__name__)

REDIAL_S = 0.5


class TcpNode:
    def __init__(self, stores: list[Store], announce_ms: float = 500.0,
                 bootstrap: list[tuple[str, int]] = (), tick: Callable[[], None] | None = None) -> None:
        self.stores = list(stores)
        self.replicator = Replicator(s.log for s in self.stores)
        self.announce_ms = announce_ms
        self.bootstrap = list(bootstrap)
        self.tick = tick
        self._conns: dict[str, asyncio.StreamWriter] = {}
        self._ids = itertools.count()
        self._server: asyncio.base_events.Server | None = None
        self._tasks: list[asyncio.Task] = []
        self.port: int | None = None

    async def start(self, host: str | None = None, port: int | None = None) -> None:
        if host is not None:
            self._server = await asyncio.start_server(self._inbound, host, port)
            self.port = self._server.sockets[0].getsockname()[1]
        for hp in self.bootstrap:
            self._tasks.append(asyncio.create_task(self._dial(*hp)))
        self._tasks.append(asyncio.create_task(self._announce_loop()))

    async def close(self) -> None:
        for t in self._tasks:
            t.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        for w in list(self._conns.values()):
            w.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _inbound(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        await self._serve(f"in-{next(self._ids)}", reader, writer)

    async def _dial(self, host: str, port: int) -> None:
        while True:
            try:
                reader, writer = await asyncio.open_connection(host, port)
            except OSError:
                await asyncio.sleep(REDIAL_S)
                continue
            await self._serve(f"out-{host}:{port}-{next(self._ids)}", reader, writer)
            await asyncio.sleep(REDIAL_S)

    async def _serve(self, conn: str, reader: asyncio.StreamReader,
                     writer: asyncio.StreamWriter) -> None:
        self._conns[conn] = writer
        try:
            await self._send(writer, self.replicator.announcements())
            while True:
                obj = await read_frame(reader)
                await self._send(writer, self.replicator.handle_obj(obj, conn))
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except FrameError as exc:
            log.warning("dropping connection %s: %s", conn, exc)
        finally:
            self._conns.pop(conn, None)
            writer.close()

    async def _send(self, writer: asyncio.StreamWriter, msgs: list[Message]) -> None:
        for m in msgs:
            await write_frame(writer, m.to_obj())

    async def _announce_loop(self) -> None:
        while True:
            if self.tick is not None:
                self.tick()
            msgs = self.replicator.announcements()
            for conn, writer in list(self._conns.items()):
                try:
                    await self._send(writer, msgs)
                except ConnectionError:
                    self._conns.pop(conn, None)
            await asyncio.sleep(self.announce_ms / 1000.0)
