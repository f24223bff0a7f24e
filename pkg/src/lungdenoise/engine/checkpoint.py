"""Checkpoint container: named float64 tensors plus a JSON header.

Layout::

    8 bytes   magic  b"LDCHKPT1"
    4 bytes   little-endian header length L
    L bytes   canonical JSON: config, tensor directory, payload sha256
    payload   concatenated raw little-endian float64, directory order

All weights are stored at 64 bits regardless of compute precision, so a
checkpoint round-trips bitwise when the model runs in float64.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import CorruptCheckpoint

MAGIC = b"LDCHKPT1"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path: str, config: dict,
                    params: dict[str, np.ndarray],
                    buffers: dict[str, np.ndarray]) -> None:
    directory = []
    chunks = []
    for role, table in (("param", params), ("buffer", buffers)):
        for name, arr in table.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            directory.append({"name": name, "shape": list(a.shape), "role": role})
            chunks.append(a.tobytes())
    payload = b"".join(chunks)
    header = _canonical({
        "config": config,
        "tensors": directory,
        "sha256": hashlib.sha256(payload).hexdigest(),
    })
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path: str) -> tuple[dict, dict, dict]:
    """Returns (config, params, buffers); validates structure and digest."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc

    if len(blob) < 12 or blob[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + hlen:
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen])
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: header is not JSON: {exc}") from exc

    payload = blob[12 + hlen :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("sha256"):
        raise CorruptCheckpoint(f"{path}: payload checksum mismatch")

    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    offset = 0
    for ent in header.get("tensors", []):
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise CorruptCheckpoint(f"{path}: payload shorter than directory")
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=offset).reshape(shape).copy()
        offset += nbytes
        (params if ent["role"] == "param" else buffers)[ent["name"]] = arr
    if offset != len(payload):
        raise CorruptCheckpoint(f"{path}: {len(payload) - offset} trailing bytes")

    return header.get("config", {}), params, buffers
