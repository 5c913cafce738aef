"""Tensor checkpoint format.

Layout: one UTF-8 JSON header line per tensor, ``{"name", "shape", "dtype": "f64"}``,
then an empty line, then each tensor's raw little-endian float64 payload in
row-major order, concatenated in header order.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError


class CheckpointError(DataError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    heads, blobs = [], []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        heads.append(json.dumps({"name": name, "shape": list(arr.shape), "dtype": "f64"}))
        blobs.append(arr.tobytes(order="C"))
    return ("\n".join(heads) + "\n\n").encode("utf-8") + b"".join(blobs)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    end = blob.find(b"\n\n")
    if end < 0:
        if blob.startswith(b"\n"):
            return {}
        raise CheckpointError("missing header terminator")
    try:
        headers = [json.loads(line) for line in blob[:end].decode("utf-8").split("\n") if line]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable tensor header: {exc}") from exc
    pos = end + 2
    out: dict[str, np.ndarray] = {}
    for h in headers:
        if h.get("dtype") != "f64":
            raise CheckpointError(f"unsupported dtype {h.get('dtype')!r} for {h.get('name')!r}")
        shape = tuple(int(s) for s in h["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for {h['name']!r}")
        out[h["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                       offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after payload")
    return out


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, dumps(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
