"""Flat binary parameter checkpoints.

Layout: the 8-byte magic ``EDGESYN1`` followed, per entry, by
``u64 name_len | name (utf-8) | u64 rank | u64 extents[rank] | f64 data``.
All integers and floats are little-endian; the file ends after the last entry.
"""

import struct

import numpy as np

from ..exceptions import CodecError

MAGIC = b"EDGESYN1"
_U64 = struct.Struct("<Q")


def encode_checkpoint(state):
    chunks = [MAGIC]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(_U64.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U64.pack(arr.ndim))
        chunks.extend(_U64.pack(e) for e in arr.shape)
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob):
    if blob[:8] != MAGIC:
        raise CodecError("not an EDGESYN1 checkpoint")
    state, pos = {}, 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CodecError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = _U64.unpack(take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = _U64.unpack(take(8))
        shape = tuple(_U64.unpack(take(8))[0] for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return state


def save_checkpoint(path, state):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(state))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
