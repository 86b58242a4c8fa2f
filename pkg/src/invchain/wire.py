"""Canonical JSON encoding and the length-prefixed frame format.

Both the replication protocol and the chain request/response API speak the
same framing: a 4-byte big-endian body length followed by a canonical JSON
body (UTF-8, no insignificant whitespace, key order as constructed).
"""
from __future__ import annotations

import asyncio
import json
import struct
from typing import Any

MAX_FRAME = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")


class FrameError(ValueError):
    pass


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def encode_frame(obj: Any) -> bytes:
    body = canonical_json(obj)
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> Any:
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"undecodable frame body: {exc}") from None


def decode_frame(data: bytes) -> Any:
    """Decode exactly one complete frame."""
    if len(data) < _HEADER.size:
        raise FrameError("truncated frame header")
    (n,) = _HEADER.unpack_from(data)
    if len(data) != _HEADER.size + n:
        raise FrameError(f"frame length mismatch: header says {n}, got {len(data) - 4}")
    return decode_body(data[_HEADER.size:])


class FrameDecoder:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Any]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _HEADER.size:
            (n,) = _HEADER.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise FrameError(f"announced frame of {n} bytes exceeds {MAX_FRAME}")
            end = _HEADER.size + n
            if len(self._buf) < end:
                break
            out.append(decode_body(bytes(self._buf[_HEADER.size:end])))
            del self._buf[:end]
        return out


async def read_frame(reader: asyncio.StreamReader) -> Any:
    header = await reader.readexactly(_HEADER.size)
    (n,) = _HEADER.unpack(header)
    if n > MAX_FRAME:
        raise FrameError(f"announced frame of {n} bytes exceeds {MAX_FRAME}")
    return decode_body(await reader.readexactly(n))


async def write_frame(writer: asyncio.StreamWriter, obj: Any) -> None:
    writer.write(encode_frame(obj))
    await writer.drain()
