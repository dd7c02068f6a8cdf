"""ETCK parameter checkpoints.

Layout (all integers little-endian)::

    b"ETCK" | version u32 | count u32
    per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u64 * rank | float32 * prod(dims)

Tensors are stored in the order given, so writing a loaded checkpoint
reproduces the original bytes.
"""
from __future__ import annotations

import io
import math
import struct
from typing import Dict, Mapping

import numpy as np

from .errors import FormatError
from .utils import atomic_write_bytes

MAGIC = b"ETCK"
VERSION = 1


def dumps(state: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(state)))
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> Dict[str, np.ndarray]:
    cur = _Cursor(data)
    if cur.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected ETCK", 0)
    version, count = cur.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<I", "name length")
        at = cur.pos
        try:
            name = cur.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not UTF-8", at) from exc
        (rank,) = cur.unpack("<I", "rank")
        dims = cur.unpack(f"<{rank}Q", "dims") if rank else ()
        n = math.prod(dims)
        raw = cur.take(4 * n, f"data of {name}")
        state[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if cur.pos != len(data):
        raise FormatError("trailing bytes after last tensor", cur.pos)
    return state


def save(path, state: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, dumps(state))


def load(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
