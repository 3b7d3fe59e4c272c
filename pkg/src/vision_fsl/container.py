"""Deterministic binary container for named float64 arrays.

Layout: 8-byte magic ``VSNARR01``, little-endian u64 header length, a UTF-8
JSON header (sorted keys), then the raw little-endian float64 buffers in
header order. The header lists ``name``, ``shape``, ``offset`` and ``nbytes``
for each array plus a free-form ``meta`` object. Identical inputs give
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"VSNARR01"


def write_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    entries, buffers, offset = [], [], 0
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def read_arrays(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path}: not an array container (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        chunk = raw[start:start + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValidationError(f"{path}: truncated buffer for {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]
