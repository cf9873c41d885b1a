"""Binary checkpoint container for model weights.

Layout (all integers little-endian):

    bytes 0..3    magic ``CVN1``
    bytes 4..7    format version (uint32)
    bytes 8..15   header length H (uint64)
    H bytes       UTF-8 JSON header: {"meta": ..., "arrays": [...]}
    payload       array data, float32, in header order; complex arrays are
                  stored as interleaved (re, im) pairs
    last 32 bytes SHA-256 digest of everything before it

Weights are stored in float32 and promoted back to float64/complex128 on
load, so saving and reloading quantizes parameters; callers that need
bit-identical behaviour across a save/load boundary should round-trip the
model through its checkpoint once and keep using the reloaded weights.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointChecksumError",
]

_MAGIC = b"CVN1"
_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def _encode_array(a: np.ndarray) -> tuple[dict, bytes]:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        flat = np.empty(a.size * 2, dtype="<f4")
        flat[0::2] = a.real.ravel()
        flat[1::2] = a.imag.ravel()
        return {"shape": list(a.shape), "kind": "complex"}, flat.tobytes()
    return ({"shape": list(a.shape), "kind": "real"},
            a.astype("<f4").ravel().tobytes())


def _decode_array(entry: dict, raw: bytes) -> np.ndarray:
    shape = tuple(entry["shape"])
    flat = np.frombuffer(raw, dtype="<f4")
    if entry["kind"] == "complex":
        values = flat[0::2].astype(np.float64) + 1j * flat[1::2].astype(np.float64)
        return values.reshape(shape)
    if entry["kind"] == "real":
        return flat.astype(np.float64).reshape(shape)
    raise CheckpointFormatError(f"unknown array kind {entry['kind']!r}")


def _payload_nbytes(entry: dict) -> int:
    count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
    return 4 * count * (2 if entry["kind"] == "complex" else 1)


def save_checkpoint(path, meta: dict, arrays: dict) -> None:
    """Write ``arrays`` (name -> ndarray) plus JSON-able ``meta`` to ``path``."""
    entries, chunks = [], []
    for name, a in arrays.items():
        entry, raw = _encode_array(a)
        entry["name"] = name
        entries.append(entry)
        chunks.append(raw)
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(_MAGIC, _VERSION, len(header)) + header + b"".join(chunks)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint, returning (meta, name -> ndarray)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size + 32:
        raise CheckpointFormatError("file too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checksum mismatch: checkpoint corrupted")
    magic, version, header_len = _PREFIX.unpack_from(body, 0)
    if magic != _MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    if start + header_len > len(body):
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        header = json.loads(body[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from exc
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        nbytes = _payload_nbytes(entry)
        raw = body[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointFormatError("truncated checkpoint payload")
        arrays[entry["name"]] = _decode_array(entry, raw)
        offset += nbytes
    if offset != len(body):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return header["meta"], arrays
