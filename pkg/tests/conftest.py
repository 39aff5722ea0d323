import numpy as np
import pytest

from fusekit.tensor_store import Checkpoint

FLOAT_WIRE = {"f32": np.float32, "f64": np.float64}
INT_WIRE = {"u8": np.uint8, "u16": np.uint16, "i64": np.int64}


def random_checkpoint(rng, num_tensors=3, max_dim=4, dtypes=("f32", "f64"),
                      with_scalar=False, with_int=False):
    """Small random checkpoint for property tests."""
    tensors = {}
    for i in range(num_tensors):
        ndim = int(rng.integers(1, 3))
        shape = tuple(int(rng.integers(1, max_dim + 1)) for _ in range(ndim))
        wire = dtypes[int(rng.integers(0, len(dtypes)))]
        tensors[f"t{i}"] = rng.standard_normal(shape).astype(FLOAT_WIRE[wire])
    if with_scalar:
        tensors["scalar"] = np.float32(rng.standard_normal())
    if with_int:
        tensors["counter"] = np.array([int(rng.integers(0, 1000))], dtype=np.int64)
    return Checkpoint(tensors)


def random_compatible_pair(rng, **kwargs):
    a = random_checkpoint(rng, **kwargs)
    tensors = {name: np.asarray(rng.standard_normal(arr.shape), dtype=arr.dtype)
               if arr.dtype.kind == "f" else arr.copy()
               for name, arr in a.items()}
    return a, Checkpoint(tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
