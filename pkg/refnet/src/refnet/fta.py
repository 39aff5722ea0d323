"""Minimal .fta tensor-archive IO.

Wire format: [u64 LE header length][UTF-8 JSON header][packed data].
The header maps tensor names to dtype, shape and [begin, end) offsets
into the data section. Writes are canonical: names sorted, buffers
packed densely in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
    "i64": np.dtype("<i8"),
}
_NAMES = {v: k for k, v in DTYPES.items()}


def write(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    header = {}
    offset = 0
    ordered = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        wire = _NAMES[np.dtype(arr.dtype).newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype]
        header[name] = {
            "dtype": wire,
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + arr.nbytes],
        }
        offset += arr.nbytes
        ordered.append(arr)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for arr in ordered:
            f.write(arr.tobytes())


def read(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        data = f.read()
    tensors = {}
    for name, entry in header.items():
        begin, end = entry["data_offsets"]
        dtype = DTYPES[entry["dtype"]]
        buf = data[begin:end]
        tensors[name] = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"]).copy()
    return tensors
