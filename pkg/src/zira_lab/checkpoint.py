"""Binary checkpoint: header + flat little-endian float64 parameter records + CRC32 trailer.

Layout (all integers little-endian):

    b"ZIRACKPT"            magic
    u32                    format version
    u32, bytes             header length, UTF-8 JSON header (sorted keys)
    u32                    record count
    per record:
        u16, bytes         name length, UTF-8 name
        u8, u32 * ndim     rank, dimensions
        f64 * prod(dims)   payload
    u32                    CRC32 of everything above
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .fileio import atomic_write_bytes
from .toymodel import ModelDims, ToyVlodModel, consolidate, init_model

MAGIC = b"ZIRACKPT"
FORMAT_VERSION = 1


def _records(model: ToyVlodModel) -> dict[str, np.ndarray]:
    out = {name: t.data for name, t in model.named_parameters().items()}
    out["probe_images"] = model.probe_images
    return out


def to_bytes(model: ToyVlodModel, task_index: int = -1) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "dims": asdict(model.dims),
        "seed": int(model.seed),
        "task_index": int(task_index),
        "pretrain_accuracy": float(model.pretrain_accuracy),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    recs = _records(model)
    parts.append(struct.pack("<I", len(recs)))
    for name, arr in recs.items():
        nb = name.encode()
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model: ToyVlodModel, task_index: int = -1):
    atomic_write_bytes(path, to_bytes(model, task_index))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> tuple[ToyVlodModel, dict]:
    if len(buf) < len(MAGIC) + 4 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    version, hlen = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(hlen))
        dims = ModelDims(**header["dims"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"bad checkpoint header: {e}") from e
    model = init_model(dims, header["seed"])
    targets = model.named_parameters()
    (n,) = r.unpack("<I")
    seen = set()
    for _ in range(n):
        (nl,) = r.unpack("<H")
        name = r.take(nl).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        if name == "probe_images":
            model.probe_images = arr
        elif name in targets:
            if targets[name].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != expected {targets[name].shape}")
            targets[name].data = arr
        else:
            raise CheckpointError(f"unknown parameter record {name!r}")
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"missing parameter records: {sorted(missing)}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after records")
    model.pretrain_accuracy = header.get("pretrain_accuracy", float("nan"))
    consolidate(model)
    return model, header


def load_checkpoint(path) -> tuple[ToyVlodModel, dict]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(buf)
