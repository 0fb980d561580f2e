"""Binary checkpoint files with a plain-text manifest alongside.

Layout (all integers little-endian)::

    magic      8 bytes  b"ATHRCKPT"
    version    uint32
    kind       uint16 length + utf-8
    seed       uint64
    config     uint32 length + utf-8 JSON (sorted keys)
    n_params   uint32
    per parameter:
        name   uint16 length + utf-8
        ndim   uint8, then ndim x uint32 extents
        values float32 little-endian, C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ATHRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    seed: int
    config: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _pack_str(s: str, fmt: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(fmt, len(raw)) + raw


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(ckpt.kind, "<H"), struct.pack("<Q", ckpt.seed)]
    parts.append(_pack_str(json.dumps(ckpt.config, sort_keys=True), "<I"))
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name, value in ckpt.params.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(_pack_str(name, "<H"))
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    view = memoryview(buf)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        values = struct.unpack_from(fmt, buf, pos)
        pos += size
        return values

    def take_str(fmt):
        nonlocal pos
        (n,) = take(fmt)
        s = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        return s

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = take_str("<H")
    (seed,) = take("<Q")
    config = json.loads(take_str("<I"))
    (n_params,) = take("<I")
    params = {}
    for _ in range(n_params):
        name = take_str("<H")
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(buf):
            raise CheckpointError("truncated parameter block")
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    return Checkpoint(kind, seed, config, params)


def manifest_text(ckpt: Checkpoint) -> str:
    lines = [f"kind: {ckpt.kind}", f"seed: {ckpt.seed}", f"version: {VERSION}"]
    for name, value in ckpt.params.items():
        lines.append(f"{name}\t{'x'.join(map(str, value.shape)) or 'scalar'}\t{value.size}")
    lines.append(f"total_parameters: {ckpt.n_parameters}")
    return "\n".join(lines) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    path.with_name(path.name + ".manifest.txt").write_text(manifest_text(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
