"""Binary PGM (P5) and PPM (P6) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out: list[int] = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated netpbm header")
        try:
            out.append(int(buf[start:pos]))
        except ValueError as exc:
            raise DataError(f"bad netpbm header token {buf[start:pos]!r}") from exc
    return out, pos + 1  # exactly one whitespace byte before the raster


def read_netpbm(path: str | Path) -> np.ndarray:
    """Read a P5/P6 file as float64 in [0, 1]; H x W for PGM, H x W x 3 for PPM."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise DataError(f"{path}: bad header {w}x{h} maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h * channels
    raster = buf[pos:pos + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise DataError(f"{path}: raster truncated")
    img = np.frombuffer(raster, dtype=dtype).astype(np.float64) / maxval
    return img.reshape((h, w) if channels == 1 else (h, w, 3))


def write_netpbm(path: str | Path, img: np.ndarray, maxval: int = 255) -> Path:
    """Write an image with values in [0, 1] (clipped) as P5 or P6."""
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as netpbm")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(dtype)
    h, w = img.shape[:2]
    path.write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + q.tobytes())
    return path
