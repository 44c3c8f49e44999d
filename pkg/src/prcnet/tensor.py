"""Dense 4-D tensor primitives.

Activations and filters are plain numpy arrays in N x C x H x W layout
(batch, channels, rows, cols), 64-bit floats by default.  32-bit mode exists
for speed experiments (`set_default_dtype`); gradient checking is only
meaningful in 64-bit.

Convolution is realized as im2col + GEMM.  ``im2col`` builds the patch
matrix P of shape (c*k*k, n*h_out*w_out) so that a convolution with filter
matrix W of shape (outch, c*k*k) is exactly ``gemm(W, P)``; ``col2im`` is its
adjoint (scatter-add) and carries gradients back to input layout.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

_DEFAULT_DTYPE = np.float64

# refuse allocations whose byte count cannot be addressed
_MAX_ELEMENTS = (1 << 62) // 8


def set_default_dtype(dtype) -> None:
    """Switch the allocation dtype (float64 default, float32 opt-in)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dt}; use float64 or float32")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def alloc(shape) -> np.ndarray:
    """Zero-filled N x C x H x W tensor; every dim must be >= 1."""
    if len(shape) != 4:
        raise ValueError(f"expected 4 dims (n, c, h, w), got {len(shape)}")
    if any(int(d) < 1 for d in shape):
        raise ValueError(f"all dims must be >= 1, got {tuple(shape)}")
    if math.prod(int(d) for d in shape) > _MAX_ELEMENTS:
        raise ValueError(f"tensor of shape {tuple(shape)} exceeds addressable memory")
    return np.zeros(tuple(int(d) for d in shape), dtype=_DEFAULT_DTYPE)


def assert_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise instead of silently propagating NaN/Inf."""
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise FloatingPointError(f"{what} contains {bad} non-finite entries")
    return a


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("gemm expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dims disagree: {a.shape} @ {b.shape}")
    return a @ b


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ValueError(f"kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride != 0:
        raise ValueError(
            f"non-integer output size: (size={size} + 2*pad={pad} - k={k}) not divisible by stride={stride}"
        )
    return span // stride + 1


def im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Patch matrix of shape (c*k*k, n*h_out*w_out), zero padded.

    Column order is batch-major then row-major over output positions, which
    is what `cols_to_nchw` undoes.
    """
    if x.ndim != 4:
        raise ValueError("im2col expects an (n, c, h, w) array")
    if k < 1:
        raise ValueError("kernel size must be >= 1")
    n, c, h, w = x.shape
    h_out = conv_out_size(h, k, stride, pad)
    w_out = conv_out_size(w, k, stride, pad)
    if pad > 0:
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        padded[:, :, pad : pad + h, pad : pad + w] = x
        x = padded
    sn, sc, sh, sw = x.strides
    windows = as_strided(
        x,
        shape=(n, c, k, k, h_out, w_out),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows.transpose(1, 2, 3, 0, 4, 5)).reshape(
        c * k * k, n * h_out * w_out
    )


def col2im(cols: np.ndarray, x_shape, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of `im2col`: scatter-add patch columns back to (n, c, h, w)."""
    n, c, h, w = x_shape
    h_out = conv_out_size(h, k, stride, pad)
    w_out = conv_out_size(w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, h_out, w_out)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += (
                cols[:, ki, kj].transpose(1, 0, 2, 3)
            )
    if pad > 0:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return out


def cols_to_nchw(mat: np.ndarray, n: int, h_out: int, w_out: int) -> np.ndarray:
    """Reshape a (outch, n*h_out*w_out) GEMM result to (n, outch, h_out, w_out)."""
    outch = mat.shape[0]
    return mat.reshape(outch, n, h_out, w_out).transpose(1, 0, 2, 3)


def nchw_to_cols(x: np.ndarray) -> np.ndarray:
    """Inverse of `cols_to_nchw` (up to contiguity)."""
    n, c, h, w = x.shape
    return x.transpose(1, 0, 2, 3).reshape(c, n * h * w)
