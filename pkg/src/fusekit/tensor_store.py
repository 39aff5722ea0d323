"""Reading/writing of .fta tensor archives and checkpoint utilities.

Archive layout (all integers little-endian):

    [u64 header_len][header_len bytes of UTF-8 JSON][data section]

The header JSON maps tensor names to ``{"dtype": ..., "shape": [...],
"data_offsets": [begin, end]}``. Offsets are relative to the start of the
data section. The canonical encoding written by :func:`write_archive`
sorts names lexicographically and packs buffers densely in that order.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

# Wire dtype strings -> explicit little-endian numpy dtypes.
DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
    "i64": np.dtype("<i8"),
}
_DTYPE_NAMES = {v: k for k, v in DTYPES.items()}

FLOAT_DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


class ArchiveError(Exception):
    """Base class for .fta parsing/encoding failures."""


class TruncatedArchiveError(ArchiveError):
    """File ends before the header or data it promises."""


class HeaderError(ArchiveError):
    """Malformed header JSON, duplicate names, or unknown dtype."""


class LayoutError(ArchiveError):
    """Data offsets overlap, leave gaps, or fall outside the data section."""


class CompatibilityError(Exception):
    """Two checkpoints disagree on names, dtypes or shapes."""


def dtype_name(dtype: np.dtype) -> str:
    """Wire name for a supported numpy dtype."""
    key = np.dtype(dtype).newbyteorder("<")
    if key.itemsize == 1:
        key = np.dtype(dtype)
    try:
        return _DTYPE_NAMES[key]
    except KeyError:
        raise HeaderError(f"unsupported dtype {dtype!r}") from None


class Checkpoint:
    """Ordered collection of named tensors; the unit of fusion.

    Iteration order is lexicographic by name. Tensors are stored as
    contiguous little-endian numpy arrays of a supported dtype.
    """

    def __init__(self, tensors: dict[str, np.ndarray]):
        converted: dict[str, np.ndarray] = {}
        for name, arr in tensors.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"tensor name must be a non-empty string, got {name!r}")
            arr = np.asarray(arr)
            wire = dtype_name(arr.dtype)  # raises for unsupported dtypes
            arr = arr.astype(DTYPES[wire], copy=False)
            if not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)  # keeps ndim >= 1 arrays intact
            converted[name] = arr
        self._tensors = converted

    @property
    def names(self) -> list[str]:
        return sorted(self._tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.names:
            yield name, self._tensors[name]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.names != other.names:
            return False
        for name in self.names:
            a, b = self[name], other[name]
            if a.dtype != b.dtype or a.shape != b.shape:
                return False
            if a.tobytes() != b.tobytes():
                return False
        return True

    def __repr__(self) -> str:
        return f"Checkpoint({len(self)} tensors)"


def _parse_header_json(raw: bytes) -> dict:
    def reject_duplicates(pairs):
        d = {}
        for key, value in pairs:
            if key in d:
                raise HeaderError(f"duplicate tensor name {key!r}")
            d[key] = value
        return d

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except HeaderError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"malformed header JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("header JSON must be an object")
    return header


def _validate_entry(name: str, entry: object) -> tuple[np.dtype, tuple[int, ...], int, int]:
    if not isinstance(name, str) or not name:
        raise HeaderError(f"tensor name must be a non-empty string, got {name!r}")
    if not isinstance(entry, dict):
        raise HeaderError(f"entry for {name!r} must be an object")
    try:
        dtype_str = entry["dtype"]
        shape = entry["shape"]
        begin, end = entry["data_offsets"]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"entry for {name!r} is missing or malformed: {exc}") from exc
    if dtype_str not in DTYPES:
        raise HeaderError(f"unknown dtype {dtype_str!r} for tensor {name!r}")
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise HeaderError(f"shape of {name!r} must be a list of non-negative ints")
    if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end):
        raise HeaderError(f"data_offsets of {name!r} must satisfy 0 <= begin <= end")
    dtype = DTYPES[dtype_str]
    nbytes = math.prod(shape) * dtype.itemsize
    if end - begin != nbytes:
        raise HeaderError(
            f"tensor {name!r}: offsets span {end - begin} bytes but "
            f"shape {shape} with dtype {dtype_str} needs {nbytes}"
        )
    return dtype, tuple(shape), begin, end


def _check_layout(spans: list[tuple[int, int, str]], data_len: int | None) -> None:
    """Spans must be non-overlapping and tile [0, max_end) exactly."""
    cursor = 0
    for begin, end, name in sorted(spans):
        if begin < cursor:
            raise LayoutError(f"tensor {name!r} overlaps the previous buffer")
        if begin > cursor:
            raise LayoutError(f"gap of {begin - cursor} bytes before tensor {name!r}")
        cursor = end
    if data_len is not None and cursor > data_len:
        raise TruncatedArchiveError(
            f"truncated data: need {cursor} bytes, data section has {data_len}"
        )


def read_header(fobj: BinaryIO) -> tuple[dict[str, tuple[np.dtype, tuple[int, ...], int, int]], int]:
    """Parse and validate the header of an open archive.

    Returns ``(entries, data_start)`` where entries maps names to
    ``(dtype, shape, begin, end)`` and data_start is the file offset of
    the data section. The file position is left at data_start.
    """
    prefix = fobj.read(8)
    if len(prefix) < 8:
        raise TruncatedArchiveError("truncated file: missing 8-byte header length")
    (header_len,) = struct.unpack("<Q", prefix)
    raw = fobj.read(header_len)
    if len(raw) < header_len:
        raise TruncatedArchiveError(
            f"truncated file: header promises {header_len} bytes, got {len(raw)}"
        )
    header = _parse_header_json(raw)
    entries = {}
    spans = []
    for name, entry in header.items():
        dtype, shape, begin, end = _validate_entry(name, entry)
        entries[name] = (dtype, shape, begin, end)
        spans.append((begin, end, name))
    _check_layout(spans, None)
    return entries, 8 + header_len


def read_archive(path: str | Path) -> Checkpoint:
    """Read a .fta archive into a Checkpoint, bit-exactly."""
    with open(path, "rb") as f:
        entries, _ = read_header(f)
        data = f.read()
    data_len = len(data)
    if entries:
        max_end = max(end for _, _, _, end in entries.values())
        if max_end > data_len:
            raise TruncatedArchiveError(
                f"truncated data: need {max_end} bytes, data section has {data_len}"
            )
    tensors = {}
    for name, (dtype, shape, begin, end) in entries.items():
        buf = data[begin:end]
        tensors[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return Checkpoint(tensors)


def write_archive(ckpt: Checkpoint, path: str | Path) -> None:
    """Write a Checkpoint in canonical form (sorted names, dense offsets)."""
    header: dict[str, dict] = {}
    offset = 0
    for name, arr in ckpt.items():
        nbytes = arr.nbytes
        header[name] = {
            "dtype": dtype_name(arr.dtype),
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for _, arr in ckpt.items():
            f.write(arr.tobytes())


def check_compatible(a: Checkpoint, b: Checkpoint) -> None:
    """Raise CompatibilityError unless name sets, dtypes and shapes match."""
    names_a, names_b = set(a.names), set(b.names)
    if names_a != names_b:
        missing = sorted(names_a - names_b)
        extra = sorted(names_b - names_a)
        if missing:
            raise CompatibilityError(f"tensor {missing[0]!r} missing from second checkpoint")
        raise CompatibilityError(f"extra tensor {extra[0]!r} in second checkpoint")
    for name in a.names:
        ta, tb = a[name], b[name]
        if ta.dtype != tb.dtype:
            raise CompatibilityError(
                f"tensor {name!r}: dtype mismatch {dtype_name(ta.dtype)} vs {dtype_name(tb.dtype)}"
            )
        if ta.shape != tb.shape:
            raise CompatibilityError(
                f"tensor {name!r}: shape mismatch {list(ta.shape)} vs {list(tb.shape)}"
            )


def flatten_concat(ckpt: Checkpoint) -> np.ndarray:
    """Concatenate all non-scalar float tensors into one f64 vector.

    Tensors are taken in lexicographic name order. Zero-dim tensors and
    integer-dtype tensors (bookkeeping entries such as batch-norm
    counters) are skipped.
    """
    parts = []
    for _, arr in ckpt.items():
        if arr.ndim == 0 or arr.dtype not in FLOAT_DTYPES:
            continue
        parts.append(arr.ravel().astype(np.float64))
    if not parts:
        return np.empty(0, dtype=np.float64)
    return np.concatenate(parts)


def skipped_names(ckpt: Checkpoint) -> list[str]:
    """Names excluded by :func:`flatten_concat`, in lexicographic order."""
    return [
        name
        for name, arr in ckpt.items()
        if arr.ndim == 0 or arr.dtype not in FLOAT_DTYPES
    ]
