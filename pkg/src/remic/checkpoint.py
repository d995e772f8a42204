"""Single-file checkpoint container.

Layout (all integers little-endian):

    magic "RMCNTR01"                      8 bytes, carries the format version
    u32 length + UTF-8 config echo        canonical key=value text
    u32 length + UTF-8 meta JSON          epoch, scores, fingerprint, rng state
    u32 block count
    per block:
        u16 length + UTF-8 name           layer path, e.g. reprogrammer.conv1.weight
        u8 ndim, ndim x u32 dims
        u32 crc32 of the raw data
        u64 byte length + raw float32 little-endian data
    sha256 of everything above            32 bytes

The same block format stores cached single matrices (spectrogram cache).
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"RMCNTR01"


@dataclass
class Checkpoint:
    config_text: str
    meta: dict
    blocks: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def backbone_fingerprint(self) -> str:
        return self.meta.get("backbone_fingerprint", "")


def _pack_block(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    name_b = name.encode("utf-8")
    parts = [struct.pack("<H", len(name_b)), name_b, struct.pack("<B", arr.ndim)]
    parts += [struct.pack("<I", d) for d in arr.shape]
    parts += [struct.pack("<I", zlib.crc32(data)), struct.pack("<Q", len(data)), data]
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    config_b = ckpt.config_text.encode("utf-8")
    meta_b = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = [MAGIC, struct.pack("<I", len(config_b)), config_b,
            struct.pack("<I", len(meta_b)), meta_b,
            struct.pack("<I", len(ckpt.blocks))]
    for name in sorted(ckpt.blocks):
        body.append(_pack_block(name, ckpt.blocks[name]))
    payload = b"".join(body)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(payload + hashlib.sha256(payload).digest())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated container", code="CHECKPOINT_CORRUPT")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}", code="CHECKPOINT_CORRUPT")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 32:
        raise CheckpointError(f"{path}: too small to be a container", code="CHECKPOINT_CORRUPT")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: trailing checksum mismatch", code="CHECKPOINT_CORRUPT")
    r = _Reader(payload, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic / unsupported version", code="CHECKPOINT_CORRUPT")
    config_text = r.take(r.u("<I")).decode("utf-8")
    meta = json.loads(r.take(r.u("<I")).decode("utf-8"))
    blocks: dict[str, np.ndarray] = {}
    for _ in range(r.u("<I")):
        name = r.take(r.u("<H")).decode("utf-8")
        ndim = r.u("<B")
        shape = tuple(r.u("<I") for _ in range(ndim))
        crc = r.u("<I")
        data = r.take(r.u("<Q"))
        if zlib.crc32(data) != crc:
            raise CheckpointError(f"{path}: block '{name}' checksum mismatch", code="CHECKPOINT_CORRUPT")
        blocks[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return Checkpoint(config_text=config_text, meta=meta, blocks=blocks)


def write_matrix(path, arr: np.ndarray) -> None:
    """Store one matrix in the container's block format (cache files)."""
    save_checkpoint(path, Checkpoint(config_text="", meta={"kind": "matrix"}, blocks={"matrix": arr}))


def read_matrix(path) -> np.ndarray:
    ckpt = load_checkpoint(path)
    if "matrix" not in ckpt.blocks:
        raise CheckpointError(f"{path}: no matrix block", code="CHECKPOINT_CORRUPT")
    return ckpt.blocks["matrix"]
