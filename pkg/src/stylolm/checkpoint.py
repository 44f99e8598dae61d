"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then the raw array payload. The header maps array names to
shape/dtype/offset; floats are stored little-endian. Writing the same
arrays twice produces identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import StyloError

MAGIC = b"SLMCKPT1"
FORMAT_VERSION = 1

_DTYPES = {"<f4": "<f4", "<f8": "<f8", "<i4": "<i4", "<i8": "<i8"}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<")
        if dt.str not in _DTYPES:
            raise StyloError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        raw = arr.astype(dt, copy=False).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": dt.str,
                         "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = {"version": FORMAT_VERSION, "arrays": entries, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(hbytes)).newbyteorder("<").tobytes())
        f.write(hbytes)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise StyloError(f"{path}: not a checkpoint file")
        (hlen,) = np.frombuffer(f.read(8), dtype="<u8")
        header = json.loads(f.read(int(hlen)).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise StyloError(f"{path}: unsupported checkpoint version {header.get('version')}")
        payload = f.read()
    arrays = {}
    for name, ent in header["arrays"].items():
        lo = ent["offset"]
        hi = lo + ent["nbytes"]
        arr = np.frombuffer(payload[lo:hi], dtype=ent["dtype"]).reshape(ent["shape"])
        arrays[name] = arr.copy()
    return arrays, header.get("meta", {})
