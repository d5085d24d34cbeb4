"""
Checkpoint container for trained classifiers.

Byte layout, all integers little-endian:

    offset  size  field
    0       4     magic b"PGCK"
    4       2     uint16 format version (currently 1)
    6       4     uint32 header length N
    10      N     UTF-8 JSON header, keys sorted:
                    {"hyperparameters": {...}, "vocabulary": [token, ...],
                     "meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
    10+N    ...   float64 little-endian tensor payloads, concatenated in
                  header order; "offset" counts bytes from the payload start

Readers must reject an unknown magic or a newer version. Equal states
serialize to equal bytes.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np

from services.errors import CheckpointFormatError, MissingCheckpoint

logger = logging.getLogger(__name__)

MAGIC = b"PGCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def dumps(tensors: dict[str, np.ndarray], hyperparameters: dict[str, Any],
          vocabulary: list[str], meta: dict[str, Any] | None = None) -> bytes:
    index, payloads, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "hyperparameters": hyperparameters,
        "vocabulary": list(vocabulary),
        "meta": meta or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(payloads)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any], list[str], dict[str, Any]]:
    if len(blob) < _PREFIX.size:
        raise CheckpointFormatError("checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version > FORMAT_VERSION:
        raise CheckpointFormatError(f"checkpoint version {version} is newer than supported {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable header: {e}") from e

    payload = memoryview(blob)[start + header_len:]
    tensors = {}
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        hi = lo + 8 * count
        if hi > len(payload):
            raise CheckpointFormatError(f"tensor {entry['name']} runs past the end of the file")
        tensors[entry["name"]] = np.frombuffer(payload[lo:hi], dtype="<f8").astype(np.float64).reshape(shape)
    return tensors, header.get("hyperparameters", {}), header.get("vocabulary", []), header.get("meta", {})


def save(path: str | Path, tensors, hyperparameters, vocabulary, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors, hyperparameters, vocabulary, meta))
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors)")
    return path


def load(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
