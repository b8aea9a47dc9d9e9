"""Flat named-tensor checkpoint archive.

Layout (all integers little-endian)::

    8s   magic b"AFSNCKPT"
    u32  format version
    u32  header length, then a UTF-8 JSON header {"kind", "config", "meta"}
    u32  tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  ndim, u32 * ndim shape
        float32 data, row-major
    32s  SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"AFSNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def n_parameters(self) -> int:
        return int(sum(np.asarray(t).size for t in self.tensors.values()))


def encode(ckpt: Checkpoint) -> bytes:
    header = json.dumps({"kind": ckpt.kind, "config": ckpt.config, "meta": ckpt.meta}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        # asarray, not ascontiguousarray: the latter turns 0-d tensors into 1-d
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; checkpoint is corrupted")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<II", body, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos += 8
    header = json.loads(body[pos : pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", body, pos)
        shape = struct.unpack_from(f"<{ndim}I", body, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * 4
        if pos + size > len(body):
            raise CheckpointError(f"tensor {name!r} truncated")
        tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after tensor table")
    return Checkpoint(header["kind"], header["config"], tensors, header.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = os.fspath(path)
    blob = encode(ckpt)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())


def from_model(kind: str, model, meta: dict | None = None) -> Checkpoint:
    tensors = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    return Checkpoint(kind, model.cfg.to_dict(), tensors, dict(meta or {}))
