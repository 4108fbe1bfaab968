"""Versioned binary container: JSON header + raw little-endian arrays.

Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header
(sorted keys), then each array's C-order bytes in the order the header lists
them.  Byte-for-byte reproducible for identical content, which the run
manifests rely on.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"SENTABIN1\n"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def write_blob(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}.get(arr.dtype.name)
        if dtype is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for array {name!r}")
        arr = arr.astype(_DTYPES[dtype], copy=False)
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = {"format": "senta-blob", "version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in payloads:
            fh.write(blob)


def read_blob(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a senta blob (magic {magic!r})")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported blob version {header.get('version')}")
        arrays = {}
        for entry in header["arrays"]:
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header["meta"], arrays
