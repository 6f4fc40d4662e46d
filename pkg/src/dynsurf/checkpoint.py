"""Checkpoint container: JSON manifest plus raw little-endian float32 buffers.

Layout on disk:

    8 bytes   magic ``b"DSURFCK1"``
    4 bytes   manifest length, uint32 little-endian
    N bytes   manifest, canonical JSON (UTF-8, no whitespace)
    ...       parameter buffers, float32 little-endian, concatenated in
              manifest entry order

Canonical JSON plus preserved entry order makes a load/save round trip
byte-exact, which the tests rely on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"DSURFCK1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _canonical_manifest(model_id: str, entries: list[tuple[str, tuple[int, ...]]]) -> bytes:
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model_id,
        "entries": [{"name": name, "shape": list(shape)} for name, shape in entries],
    }
    return json.dumps(manifest, separators=(",", ":"), sort_keys=False).encode("utf-8")


def save_checkpoint(path: str | Path, model_id: str, params: dict[str, Tensor | np.ndarray]) -> None:
    """Write named arrays as float32; insertion order of ``params`` is preserved."""
    entries = []
    buffers = []
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append((name, arr.shape))
        buffers.append(arr.tobytes())
    blob = _canonical_manifest(model_id, entries)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    """Return (model_id, name -> float32 array) in manifest order."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    mlen = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    manifest = json.loads(raw[12:12 + mlen].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    out: dict[str, np.ndarray] = {}
    cursor = 12 + mlen
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = raw[cursor:cursor + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated buffer for entry {entry['name']}")
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        cursor += nbytes
    if cursor != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - cursor} trailing bytes after last entry")
    return manifest["model"], out


def restore_params(params: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing parameter dict, checking names and shapes."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, p in params.items():
        arr = loaded[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.data.shape}")
        p.data[...] = arr.astype(p.data.dtype)
