"""Rank-4 float tensors, seeded generators and the T4F1 binary format.

Tensors are plain numpy arrays laid out as (batch, channel, height, width).
float32 is the working precision; every kernel in the package preserves the
dtype of its inputs, so passing float64 arrays gives the high-precision mode
used by the gradient checks.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import FormatError, ShapeError

DTYPE = np.float32
MAGIC = b"T4F1"

# Hard cap on element count; keeps a typo in a shape from exhausting memory.
MAX_ELEMENTS = 2**31 - 1


def _check_shape(shape: Sequence[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-tuple shape, got {shape}")
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative dimension in {shape}")
    if int(np.prod(shape, dtype=object)) > MAX_ELEMENTS:
        raise MemoryError(f"shape {shape} exceeds the addressable range")
    return shape


def alloc(shape: Sequence[int], fill: float = 0.0, dtype=DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), fill, dtype=dtype)


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``seed`` may be an int or a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split(seed, k: int) -> list[np.random.Generator]:
    """Derive ``k`` independent generators from one seed, deterministically."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(child) for child in ss.spawn(k)]


def gaussian(shape: Sequence[int], mean: float, std: float,
             rng: np.random.Generator, dtype=DTYPE) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    shape = _check_shape(shape)
    return (rng.standard_normal(shape) * std + mean).astype(dtype)


def map_zip(a: np.ndarray, b: np.ndarray, f: Callable) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return np.asarray(f(a, b), dtype=np.result_type(a, b))


def write_tensor(fh: BinaryIO, x: np.ndarray) -> None:
    """Write ``x`` as magic, four little-endian u32 dims, then raw f32 data.

    Arrays with fewer than four dims are padded with leading ones.
    """
    if x.ndim > 4:
        raise ShapeError(f"cannot serialize rank-{x.ndim} array")
    shape = (1,) * (4 - x.ndim) + tuple(x.shape)
    fh.write(MAGIC)
    fh.write(struct.pack("<4I", *shape))
    fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    offset = fh.tell() if fh.seekable() else 0
    magic = fh.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r} at byte {offset}")
    dims = fh.read(16)
    if len(dims) != 16:
        raise FormatError(f"truncated tensor header at byte {offset + 4}")
    shape = struct.unpack("<4I", dims)
    count = int(np.prod(shape))
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(f"truncated tensor payload at byte {offset + 20}")
    return np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(shape)
