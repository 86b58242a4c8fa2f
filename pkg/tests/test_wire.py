import asyncio

import pytest
from hypothesis import given, strategies as st

from invchain.wire import (MAX_FRAME, FrameDecoder, FrameError, canonical_json, decode_frame,
                           encode_frame, read_frame, write_frame)

json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(),
    lambda kids: st.lists(kids) | st.dictionaries(st.text(), kids),
    max_leaves=20,
)


def test_canonical_json_has_no_whitespace_and_keeps_order():
    assert canonical_json({"b": 1, "a": [1, 2]}) == b'{"b":1,"a":[1,2]}'


def test_canonical_json_is_utf8_not_escaped():
    assert canonical_json("é") == '"é"'.encode("utf-8")


def test_canonical_json_rejects_nan():
    with pytest.raises(ValueError):
        canonical_json(float("nan"))


def test_frame_has_big_endian_length_prefix():
    frame = encode_frame({"x": 1})
    assert frame[:4] == len(b'{"x":1}').to_bytes(4, "big")
    assert frame[4:] == b'{"x":1}'


@given(json_values)
def test_frame_roundtrip(obj):
    assert decode_frame(encode_frame(obj)) == obj


@given(st.lists(json_values, max_size=5), st.integers(1, 7))
def test_decoder_reassembles_split_stream(objs, chunk):
    data = b"".join(encode_frame(o) for o in objs)
    dec = FrameDecoder()
    out = []
    for i in range(0, len(data), chunk):
        out.extend(dec.feed(data[i:i + chunk]))
    assert out == objs


def test_decoder_rejects_oversized_announcement():
    with pytest.raises(FrameError):
        FrameDecoder().feed((MAX_FRAME + 1).to_bytes(4, "big"))


def test_decode_frame_rejects_truncated():
    with pytest.raises(FrameError):
        decode_frame(encode_frame({"a": 1})[:-1])


def test_async_stream_roundtrip():
    async def go():
        got = []

        async def handler(reader, writer):
            got.append(await read_frame(reader))
            await write_frame(writer, {"ok": True})
            writer.close()

        server = await asyncio.start_server(handler, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        await write_frame(writer, {"hello": [1, 2]})
        reply = await read_frame(reader)
        writer.close()
        server.close()
        await server.wait_closed()
        return got, reply

    got, reply = asyncio.run(go())
    assert got == [{"hello": [1, 2]}] and reply == {"ok": True}
