"""STFA checkpoint files.

Layout (little-endian)::

    magic  b"STFA"
    u32    version
    u32    entry count
    entries, sorted by path:
        u16 path length, UTF-8 path, u8 rank, u32 extents[rank], f64 payload

Parameters are stored under their canonical paths. The model config, epoch
and best validation loss ride along as ``meta/...`` entries so a checkpoint
is self-describing.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import ModelConfig, expected_shapes
from .errors import DataError
from .tensor import Tensor

MAGIC = b"STFA"
VERSION = 1
META = "meta/"


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    epoch: int = 0
    best_val_loss: float = float("inf")


def _flatten(prefix: str, value, out: dict[str, np.ndarray]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}/{k}", v, out)
    else:
        out[prefix] = np.asarray(value, dtype=np.float64)


def _unflatten(template, prefix: str, entries: dict[str, np.ndarray]):
    if isinstance(template, dict):
        return {k: _unflatten(v, f"{prefix}/{k}", entries) for k, v in template.items()}
    if prefix not in entries:
        raise DataError(f"checkpoint is missing config entry {prefix!r}")
    arr = entries[prefix]
    if isinstance(template, bool):
        return bool(arr)
    if isinstance(template, int):
        return int(arr)
    if isinstance(template, float):
        return float(arr)
    return [[int(v) for v in row] for row in arr]  # backbone table


def encode(ckpt: Checkpoint) -> bytes:
    entries: dict[str, np.ndarray] = {k: v.data for k, v in ckpt.params.items()}
    _flatten(META + "config", ckpt.config.to_dict(), entries)
    entries[META + "epoch"] = np.asarray(float(ckpt.epoch))
    entries[META + "best_val_loss"] = np.asarray(float(ckpt.best_val_loss))
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for path in sorted(entries):
        arr = np.asarray(entries[path], dtype=np.float64)
        name = path.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def decode(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise DataError("not an STFA checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        pos = 12
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            path = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            entries[path] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(buf):
        raise DataError(f"corrupt checkpoint: {len(buf) - pos} trailing bytes")

    config = ModelConfig.from_dict(
        _unflatten(ModelConfig().to_dict(), META + "config", entries))
    shapes = expected_shapes(config)
    missing = sorted(k for k in shapes if k not in entries)
    if missing:
        raise DataError(f"checkpoint is missing tensors: {', '.join(missing)}")
    for k, shape in shapes.items():
        if entries[k].shape != shape:
            raise DataError(f"checkpoint tensor {k} has shape {entries[k].shape}, expected {shape}")
    unknown = sorted(k for k in entries if k not in shapes and not k.startswith(META))
    if unknown:
        raise DataError(f"checkpoint has unexpected tensors: {', '.join(unknown)}")
    params = {k: Tensor(entries[k], requires_grad=True) for k in sorted(shapes)}
    for k in (META + "epoch", META + "best_val_loss"):
        if k not in entries:
            raise DataError(f"checkpoint is missing {k!r}")
    return Checkpoint(params, config, int(entries[META + "epoch"]),
                      float(entries[META + "best_val_loss"]))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode(ckpt))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)
