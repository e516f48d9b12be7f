"""Dense tensor primitives backed by float32 numpy arrays.

All activations, gradients, and parameters in this package are contiguous
row-major numpy arrays of rank 1..4. Rank-4 layout is batch x height x
width x channels. Operations here never broadcast: shapes must match
exactly, and violations raise ShapeError.

Randomness goes through a single seeded PCG64 generator so that every
draw sequence is reproducible across runs and platforms.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

MAX_RANK = 4

# The package-wide tensor type is a plain numpy ndarray (float32 for all
# stored parameters and activations; the gradient-check harness may pass
# float64 arrays through the same code paths).
Tensor = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def check_shape(dims) -> tuple:
    """Validate a shape: rank 1..4, every extent a positive integer."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"extents must be >= 1, got {dims}")
    if math.prod(dims) > np.iinfo(np.intp).max:
        raise ShapeError(f"element count overflows platform integer: {dims}")
    return dims


def tensor_new(shape, fill: float = 0.0) -> Tensor:
    """New float32 tensor of the given shape, every element == fill."""
    dims = check_shape(shape)
    return np.full(dims, fill, dtype=np.float32)


def he_init(shape, fan_in: int, rng: np.random.Generator) -> Tensor:
    """He-normal initialization: normal(0, sqrt(2/fan_in)), float32."""
    dims = check_shape(shape)
    if fan_in < 1:
        raise ShapeError(f"fan_in must be >= 1, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(dims) * std).astype(np.float32)


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b)
    return a - b


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; b may be a tensor of equal shape or a scalar."""
    if isinstance(b, np.ndarray):
        _check_same_shape(a, b)
    return a * b


def max_with_scalar(a: Tensor, s: float) -> Tensor:
    return np.maximum(a, a.dtype.type(s))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product [m,k] x [k,n] -> [m,n].

    Accumulation is delegated to BLAS with a fixed sequential-over-k
    contraction order per call site, so results are bitwise reproducible
    for a fixed build and thread count.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def reshape(t: Tensor, new_shape) -> Tensor:
    """Same data, new shape; element counts must agree (row-major order)."""
    dims = check_shape(new_shape)
    if math.prod(dims) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elems) to {dims}")
    return np.ascontiguousarray(t).reshape(dims)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join two rank-4 tensors along the channel axis: a's channels first."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels needs rank-4 tensors, got {a.shape}, {b.shape}")
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"batch/spatial extents differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def split_channels(t: Tensor, c1: int) -> tuple[Tensor, Tensor]:
    """Inverse of concat_channels: first c1 channels, then the rest."""
    if t.ndim != 4:
        raise ShapeError(f"split_channels needs a rank-4 tensor, got {t.shape}")
    if not 1 <= c1 < t.shape[3]:
        raise ShapeError(f"split point {c1} out of range for {t.shape[3]} channels")
    return t[..., :c1].copy(), t[..., c1:].copy()
