"""Hashing and small JSON helpers shared by the CLI and the experiment runner."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def content_hash(obj) -> str:
    """Short SHA-256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, default=_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_sidecar(path, meta: dict) -> Path:
    """Provenance for formats without room for metadata (CSV): ``<path>.meta.json``."""
    side = Path(str(path) + ".meta.json")
    write_json(side, meta)
    return side
