"""Binary checkpoint container.

Layout::

    b"SCCKPT01"                      magic
    uint64 little-endian             header length in bytes
    UTF-8 JSON header                seed, step, meta, tensor table
    raw little-endian float64 data   tensors back to back, row-major

Each tensor-table entry carries ``name``, ``shape`` and ``offset`` (in
values, from the start of the data block).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, seed, step, meta=None):
    path = Path(path)
    table, offset = [], 0
    ordered = sorted(tensors.items())
    for name, arr in ordered:
        arr = np.asarray(arr, dtype=np.float64)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps(
        {"seed": int(seed), "step": int(step), "meta": meta or {}, "tensors": table},
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, arr in ordered:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(tensors, seed, step, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + n > data.size:
            raise CheckpointError(f"{path}: truncated data for tensor {entry['name']!r}")
        tensors[entry["name"]] = data[start:start + n].astype(np.float64).reshape(entry["shape"])
    return tensors, header["seed"], header["step"], header["meta"]
