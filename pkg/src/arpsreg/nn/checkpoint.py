"""Weight checkpoint container.

Layout (all little-endian)::

    b"ARPSCKPT"            8-byte magic
    uint32 version         currently 1
    uint32 header_len
    header_len bytes       UTF-8 JSON: {"tensors": [{"name", "shape", "offset", "nbytes"}], "meta": {...}}
    payload                concatenated float32 tensors, offsets relative to payload start
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"ARPSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: "OrderedDict[str, np.ndarray]", meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in state.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    payload = raw[16 + hlen :]
    state = OrderedDict()
    for e in header["tensors"]:
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        state[e["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).copy()
    return state, header.get("meta", {})
