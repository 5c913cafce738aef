"""Binary 8-bit netpbm I/O (P5 grayscale, P6 RGB)."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..numerics.serialize import atomic_write


class NetpbmError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode(values: np.ndarray) -> bytes:
    """[0,1] float image (H x W or H x W x 3) to P5/P6 bytes."""
    values = np.asarray(values)
    if values.ndim == 2:
        magic, h, w = b"P5", *values.shape
    elif values.ndim == 3 and values.shape[2] == 3:
        magic, h, w = b"P6", *values.shape[:2]
    else:
        raise DataError(f"cannot encode array of shape {values.shape} as netpbm")
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + _quantize(values).tobytes()


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < 2 or blob[:1] != b"P" or blob[1:2] not in (b"5", b"6"):
        raise NetpbmError("expected magic P5 or P6", 0)
    channels = 1 if blob[1:2] == b"5" else 3
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError("expected decimal header field", start)
        fields.append((int(blob[start:pos]), start))
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise NetpbmError("expected single whitespace after maxval", pos)
    pos += 1
    (w, _), (h, _), (maxval, moff) = fields
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}", moff)
    need = w * h * channels
    if len(blob) - pos < need:
        raise NetpbmError(f"raster truncated: need {need} bytes, have {len(blob) - pos}", pos)
    raster = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos).astype(np.float64)
    raster /= 255.0
    return raster.reshape(h, w) if channels == 1 else raster.reshape(h, w, 3)


def save(path: str | os.PathLike, values: np.ndarray) -> None:
    atomic_write(path, encode(values))


def load(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())
