"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MOSTDSA1"                 magic
    u32 version
    u32 len, bytes              UTF-8 config text
    u32 count                   number of parameters, then per parameter:
        u32 len, bytes          UTF-8 name
        u32 ndim, u32 * ndim    shape
        f32 * prod(shape)       values
    u32 crc32                   over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Tuple

import numpy as np

from .config import Config
from .tensor_ops import ParamStore

MAGIC = b"MOSTDSA1"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def dumps(params: ParamStore, cfg: Config) -> bytes:
    parts = [MAGIC, _u32(VERSION)]
    text = cfg.to_text().encode("utf-8")
    parts += [_u32(len(text)), text, _u32(len(params))]
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        parts += [_u32(len(raw)), raw, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads(buf: bytes) -> Tuple[ParamStore, Config]:
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, stored = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(body) != stored:
        raise CheckpointError("checkpoint checksum mismatch; file is corrupted")
    rd = _Reader(body)
    rd.take(len(MAGIC))
    version = rd.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = Config.from_text(rd.take(rd.u32()).decode("utf-8"))
    params = ParamStore(seed=None)
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        shape = tuple(rd.u32() for _ in range(rd.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        params.add(name, arr)
    if rd.pos != len(body):
        raise CheckpointError("trailing bytes after parameter table")
    return params, cfg


def save(path, params: ParamStore, cfg: Config) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, cfg))


def load(path) -> Tuple[ParamStore, Config]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return loads(path.read_bytes())
