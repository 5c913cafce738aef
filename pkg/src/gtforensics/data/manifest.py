"""Dataset manifest: a JSON array of {"path", "label", "mask_path"} entries."""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import DataError
from ..numerics.serialize import atomic_write


def save(path: str | Path, entries: list[dict]) -> None:
    atomic_write(path, json.dumps(entries, indent=1) + "\n")


def load(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise DataError(f"manifest {path} must be a JSON array")
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "path" not in e or e.get("label") not in (0, 1):
            raise DataError(f"manifest {path} entry {i} needs 'path' and label 0/1")
    return entries
