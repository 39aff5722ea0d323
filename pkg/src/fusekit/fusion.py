"""Weighted fusion of checkpoints and cosine similarity in weight space."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fusekit.tensor_store import (
    Checkpoint,
    CompatibilityError,
    FLOAT_DTYPES,
    TruncatedArchiveError,
    check_compatible,
    dtype_name,
    flatten_concat,
    read_header,
    skipped_names,
)

COEFF_SUM_TOL = 1e-6


class FusionError(Exception):
    """Fusion failed (bad coefficients, differing integer tensors, ...)."""


@dataclass(frozen=True)
class FusionCoefficients:
    """One coefficient per input checkpoint; must sum to 1."""

    values: tuple[float, ...]

    def __init__(self, values):
        object.__setattr__(self, "values", tuple(float(v) for v in values))
        if not all(np.isfinite(v) for v in self.values):
            raise FusionError(f"coefficients must be finite, got {self.values}")
        total = float(sum(self.values))
        if abs(total - 1.0) > COEFF_SUM_TOL:
            raise FusionError(f"coefficients must sum to 1, got sum {total!r}")

    @classmethod
    def pair(cls, alpha: float) -> "FusionCoefficients":
        return cls((alpha, 1.0 - alpha))

    @classmethod
    def uniform(cls, k: int) -> "FusionCoefficients":
        return cls((1.0 / k,) * k)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SimilarityReport:
    cosine: float
    dimension: int
    skipped: list[str] = field(default_factory=list)


def _check_alpha(alpha: float, extrapolate: bool) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise FusionError(f"alpha must be finite, got {alpha!r}")
    if not extrapolate and not 0.0 <= alpha <= 1.0:
        raise FusionError(
            f"alpha {alpha!r} outside [0, 1]; pass extrapolate=True to allow"
        )
    return alpha


def _fuse_pair_array(a: np.ndarray, b: np.ndarray, alpha: float, name: str) -> np.ndarray:
    if a.dtype not in FLOAT_DTYPES:
        if not np.array_equal(a, b):
            raise FusionError(f"integer tensor {name!r} differs between checkpoints")
        return a.copy()
    # Accumulate in f64; the b + alpha*(a-b) form keeps alpha=0 and a==b exact.
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    fused = b64 + alpha * (a64 - b64)
    if not np.all(np.isfinite(fused)):
        raise FusionError(f"non-finite values in fused tensor {name!r}")
    return fused.astype(a.dtype)


def fuse_pair(a: Checkpoint, b: Checkpoint, alpha: float, *, extrapolate: bool = False) -> Checkpoint:
    """Element-wise alpha*a + (1-alpha)*b, accumulated in f64.

    Float tensors are fused and emitted in their stored dtype; integer
    tensors are copied if bit-identical across inputs and rejected
    otherwise.
    """
    alpha = _check_alpha(alpha, extrapolate)
    check_compatible(a, b)
    return Checkpoint({name: _fuse_pair_array(ta, b[name], alpha, name) for name, ta in a.items()})


def fuse_many(ckpts: list[Checkpoint], coeffs: FusionCoefficients) -> Checkpoint:
    """Element-wise sum of coeffs[i] * ckpts[i] over compatible checkpoints."""
    if not isinstance(coeffs, FusionCoefficients):
        coeffs = FusionCoefficients(coeffs)
    if len(ckpts) < 2:
        raise FusionError(f"fuse_many needs at least 2 checkpoints, got {len(ckpts)}")
    if len(coeffs) != len(ckpts):
        raise FusionError(
            f"{len(coeffs)} coefficients for {len(ckpts)} checkpoints"
        )
    first = ckpts[0]
    for other in ckpts[1:]:
        check_compatible(first, other)
    if len(ckpts) == 2:
        # Same kernel as fuse_pair so the K=2 case matches it bit-for-bit.
        return Checkpoint(
            {name: _fuse_pair_array(ta, ckpts[1][name], coeffs.values[0], name) for name, ta in first.items()}
        )
    tensors = {}
    for name, t0 in first.items():
        if t0.dtype not in FLOAT_DTYPES:
            for other in ckpts[1:]:
                if not np.array_equal(t0, other[name]):
                    raise FusionError(f"integer tensor {name!r} differs between checkpoints")
            tensors[name] = t0.copy()
            continue
        acc = np.zeros(t0.shape, dtype=np.float64)
        for c, ckpt in zip(coeffs.values, ckpts):
            acc += c * ckpt[name].astype(np.float64)
        if not np.all(np.isfinite(acc)):
            raise FusionError(f"non-finite values in fused tensor {name!r}")
        tensors[name] = acc.astype(t0.dtype)
    return Checkpoint(tensors)


def swa_average(ckpts: list[Checkpoint]) -> Checkpoint:
    """Equally weighted average; the SWA baseline."""
    if len(ckpts) == 0:
        raise FusionError("swa_average needs at least 1 checkpoint")
    if len(ckpts) == 1:
        return Checkpoint({name: arr.copy() for name, arr in ckpts[0].items()})
    return fuse_many(ckpts, FusionCoefficients.uniform(len(ckpts)))


def cosine_similarity(a: Checkpoint, b: Checkpoint) -> SimilarityReport:
    """Cosine of the angle between the flattened, concatenated weights.

    Zero-dim and integer tensors are excluded (and reported as skipped),
    matching the exclusions of :func:`flatten_concat`.
    """
    check_compatible(a, b)
    va = flatten_concat(a)
    vb = flatten_concat(b)
    if va.size == 0:
        raise ValueError("no non-scalar float tensors to compare")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm weights")
    cosine = float(np.dot(va, vb) / (norm_a * norm_b))
    cosine = min(1.0, max(-1.0, cosine))
    return SimilarityReport(cosine=cosine, dimension=int(va.size), skipped=skipped_names(a))


def fuse_archive_files(
    path_a: str | Path,
    path_b: str | Path,
    alpha: float,
    out_path: str | Path,
    *,
    extrapolate: bool = False,
    chunk_bytes: int = 16 << 20,
) -> None:
    """Fuse two archives tensor-by-tensor without loading them whole.

    Streams each tensor through fixed-size chunks so peak memory stays
    far below the checkpoint size. Semantics match
    fuse_pair(read(a), read(b), alpha) exactly.
    """
    alpha = _check_alpha(alpha, extrapolate)
    with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
        entries_a, data_start_a = read_header(fa)
        entries_b, data_start_b = read_header(fb)
        names_a, names_b = set(entries_a), set(entries_b)
        if names_a != names_b:
            missing = sorted(names_a - names_b)
            extra = sorted(names_b - names_a)
            if missing:
                raise CompatibilityError(f"tensor {missing[0]!r} missing from second checkpoint")
            raise CompatibilityError(f"extra tensor {extra[0]!r} in second checkpoint")
        for name in sorted(entries_a):
            da, sa = entries_a[name][0], entries_a[name][1]
            db, sb = entries_b[name][0], entries_b[name][1]
            if da != db:
                raise CompatibilityError(
                    f"tensor {name!r}: dtype mismatch {dtype_name(da)} vs {dtype_name(db)}"
                )
            if sa != sb:
                raise CompatibilityError(
                    f"tensor {name!r}: shape mismatch {list(sa)} vs {list(sb)}"
                )

        # Canonical output header: sorted names, dense offsets.
        header: dict[str, dict] = {}
        offset = 0
        for name in sorted(entries_a):
            dtype, shape, _, _ = entries_a[name]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            header[name] = {
                "dtype": dtype_name(dtype),
                "shape": list(shape),
                "data_offsets": [offset, offset + nbytes],
            }
            offset += nbytes
        raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

        with open(out_path, "wb") as out:
            out.write(struct.pack("<Q", len(raw)))
            out.write(raw)
            for name in sorted(entries_a):
                dtype, shape, begin_a, end_a = entries_a[name]
                _, _, begin_b, _ = entries_b[name]
                nbytes = end_a - begin_a
                fa.seek(data_start_a + begin_a)
                fb.seek(data_start_b + begin_b)
                if dtype not in FLOAT_DTYPES:
                    buf_a = fa.read(nbytes)
                    buf_b = fb.read(nbytes)
                    if buf_a != buf_b:
                        raise FusionError(f"integer tensor {name!r} differs between checkpoints")
                    out.write(buf_a)
                    continue
                remaining = nbytes
                while remaining > 0:
                    take = min(remaining, chunk_bytes)
                    buf_a = fa.read(take)
                    buf_b = fb.read(take)
                    if len(buf_a) < take or len(buf_b) < take:
                        raise TruncatedArchiveError(
                            f"truncated data while reading tensor {name!r}"
                        )
                    ca = np.frombuffer(buf_a, dtype=dtype)
                    cb = np.frombuffer(buf_b, dtype=dtype)
                    if alpha == 1.0:
                        fused = ca
                    elif alpha == 0.0:
                        fused = cb
                    else:
                        a64 = ca.astype(np.float64)
                        b64 = cb.astype(np.float64)
                        f64 = b64 + alpha * (a64 - b64)
                        if not np.all(np.isfinite(f64)):
                            raise FusionError(f"non-finite values in fused tensor {name!r}")
                        fused = f64.astype(dtype)
                    out.write(fused.tobytes())
                    remaining -= take
