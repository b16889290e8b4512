"""Canonical JSON helpers.

Checkpoints, manifests, and wire payloads are all written through
`canonical_json_bytes` so that identical in-memory state produces
byte-identical files: sorted keys, two-space indent, trailing newline.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError


def canonical_json_bytes(obj: object) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_json(path: str | Path, obj: object) -> None:
    Path(path).write_bytes(canonical_json_bytes(obj))


def read_json(path: str | Path) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
