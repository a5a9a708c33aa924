"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"DHTMCKPT"
    version    uint32
    meta_len   uint64
    meta       UTF-8 JSON, meta_len bytes
    payload    raw array bytes, concatenated

The JSON metadata holds the experiment config, the episode counter and the
component states. Arrays inside the states are replaced by ``{"__array__": i}``
references into a table of (dtype, shape, offset, nbytes) entries; a SHA-256 of
the payload guards against truncation and bit rot.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DHTMCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


class UnsupportedVersionError(CheckpointError):
    pass


def _encode(obj, arrays: list[np.ndarray]):
    if isinstance(obj, np.ndarray):
        arrays.append(np.ascontiguousarray(obj))
        return {"__array__": len(arrays) - 1}
    if isinstance(obj, dict):
        return {str(k): _encode(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v, arrays) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj, arrays: list[np.ndarray]):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {k: _decode(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v, arrays) for v in obj]
    return obj


def dumps(document: dict) -> bytes:
    arrays: list[np.ndarray] = []
    tree = _encode(document, arrays)
    table, chunks, offset = [], [], 0
    for a in arrays:
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        table.append({"dtype": le.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    meta = json.dumps({"tree": tree, "arrays": table, "sha256": hashlib.sha256(payload).hexdigest()},
                      sort_keys=True).encode()
    return _HEAD.pack(MAGIC, VERSION, len(meta)) + meta + payload


def loads(data: bytes) -> dict:
    if len(data) < _HEAD.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, meta_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("bad magic header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    start = _HEAD.size + meta_len
    if start > len(data):
        raise CheckpointError("truncated metadata")
    try:
        meta = json.loads(data[_HEAD.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted metadata: {exc}") from exc
    payload = data[start:]
    if hashlib.sha256(payload).hexdigest() != meta.get("sha256"):
        raise CheckpointError("payload checksum mismatch")
    arrays = []
    for entry in meta["arrays"]:
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        a = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays.append(a.astype(a.dtype.newbyteorder("="), copy=True))
    return _decode(meta["tree"], arrays)


def save(path: str | Path, document: dict) -> None:
    Path(path).write_bytes(dumps(document))


def load(path: str | Path) -> dict:
    return loads(Path(path).read_bytes())
