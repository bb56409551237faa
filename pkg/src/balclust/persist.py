"""Versioned binary container for fitted dispatchers.

Layout (little-endian)::

    5 bytes   magic b"BDSP1"
    u8        kind tag
    u32       length of the JSON header in bytes
    JSON      {"params": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}
    raw array bytes, C order, in the order listed in "arrays"
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BalclustError

MAGIC = b"BDSP1"
KINDS = {"nn": 1, "random": 2, "bpt": 3, "lsh": 4}
_TAGS = {v: k for k, v in KINDS.items()}


def dump(path, kind: str, params: dict, arrays: dict[str, np.ndarray]) -> None:
    listing = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        listing.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(dt, copy=False).tobytes())
    header = json.dumps({"params": params, "arrays": listing}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", KINDS[kind], len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise BalclustError(f"{path}: not a dispatcher file (bad magic)")
    tag, hlen = struct.unpack_from("<BI", data, 5)
    if tag not in _TAGS:
        raise BalclustError(f"{path}: unknown dispatcher kind {tag}")
    off = 10
    header = json.loads(data[off:off + hlen].decode())
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="))
        off += count * dt.itemsize
    if off != len(data):
        raise BalclustError(f"{path}: trailing bytes after the last array")
    return _TAGS[tag], header["params"], arrays
