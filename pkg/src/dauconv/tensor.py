"""Dense rank-4 activation storage.

All activations and gradients in this library are numpy arrays of shape
(N, C, H, W) in C (row-major) order, single precision by default.
Verification code may pass float64 arrays through the same operations;
every op preserves the dtype of its input.
"""

from __future__ import annotations

import numpy as np

# Maximum number of elements a tensor may hold; guards against 32-bit
# index overflow in the flat-offset arithmetic.
MAX_ELEMENTS = 2**31 - 1

DEFAULT_DTYPE = np.float32


def zeros(dims: tuple[int, int, int, int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Allocate an all-zero (N, C, H, W) tensor."""
    validate_dims(dims)
    return np.zeros(dims, dtype=dtype)


def validate_dims(dims) -> None:
    """Reject anything that is not four positive, non-overflowing ints."""
    if len(dims) != 4:
        raise ValueError(f"expected 4 dims (N, C, H, W), got {tuple(dims)}")
    n, c, h, w = (int(d) for d in dims)
    if min(n, c, h, w) < 1:
        raise ValueError(f"all dims must be >= 1, got {tuple(dims)}")
    if n * c * h * w > MAX_ELEMENTS:
        raise ValueError(f"tensor of {tuple(dims)} overflows element limit")


def validate_nchw(t: np.ndarray) -> np.ndarray:
    """Check that an array is a valid rank-4 activation tensor."""
    if t.ndim != 4:
        raise ValueError(f"expected rank-4 (N, C, H, W) array, got rank {t.ndim}")
    validate_dims(t.shape)
    return t


def flat_offset(dims, n: int, c: int, y: int, x: int) -> int:
    """Row-major offset of element (n, c, y, x) in a tensor of shape dims."""
    _, C, H, W = dims
    return ((n * C + c) * H + y) * W + x


def index_of(dims, offset: int) -> tuple[int, int, int, int]:
    """Inverse of flat_offset."""
    _, C, H, W = dims
    x = offset % W
    offset //= W
    y = offset % H
    offset //= H
    c = offset % C
    return offset // C, c, y, x


def elementwise_relu(t: np.ndarray) -> np.ndarray:
    """max(0, t), same shape and dtype."""
    return np.maximum(t, 0)


def reduce_sum_spatial(t: np.ndarray) -> np.ndarray:
    """Sum over the two spatial axes; returns an (N, C) array."""
    validate_nchw(t)
    return t.sum(axis=(2, 3))
