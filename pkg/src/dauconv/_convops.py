"""im2col/GEMM kernels for anchored 2-D correlation.

Everything here works on (N, C, H, W) arrays and preserves dtype. The
"anchored" form generalizes same-size correlation: the kernel window of
size (Dy, Dx) is read at offsets anchor + (0..Dy-1, 0..Dx-1) relative to
each output pixel, with zero padding outside the input. A centered k x k
correlation is anchor = (-(k//2), -(k//2)); the displaced-unit layer uses
whatever offset box its displacements currently occupy.

The window matrix (C*Dy*Dx, N*Ho*Wo) is materialized once per call via
channel-first slice fills (much faster than generic strided copies) and
can be reused between the forward pass and the weight gradient, which
contract against the same windows.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

# guard against runaway window-matrix allocations (floats, not bytes)
_MATRIX_BUDGET = 220_000_000


def _pad_channel_first(x: np.ndarray, anchor: tuple[int, int], ksize: tuple[int, int],
                       out_hw: tuple[int, int], stride: tuple[int, int] = (1, 1)):
    """Zero-padded copy of x in (C, N, Hp, Wp) layout plus the padded
    origin of the window for output pixel (0, 0)."""
    n, c, h, w = x.shape
    ay, ax = anchor
    dy, dx = ksize
    ho, wo = out_hw
    sy, sx = stride
    before_y, after_y = max(0, -ay), max(0, ay + (ho - 1) * sy + dy - h)
    before_x, after_x = max(0, -ax), max(0, ax + (wo - 1) * sx + dx - w)
    xp = np.zeros((c, n, h + before_y + after_y, w + before_x + after_x), dtype=x.dtype)
    xp[:, :, before_y : before_y + h, before_x : before_x + w] = x.transpose(1, 0, 2, 3)
    return xp, (ay + before_y, ax + before_x)


def window_matrix(x: np.ndarray, anchor: tuple[int, int], ksize: tuple[int, int]) -> np.ndarray:
    """(C*Dy*Dx, N*H*W) matrix of all stride-1 same-size window reads."""
    n, c, h, w = x.shape
    dy, dx = ksize
    if c * dy * dx * n * h * w > _MATRIX_BUDGET:
        raise MemoryError("window matrix exceeds the allocation budget; reduce the batch")
    xp, (oy, ox) = _pad_channel_first(x, anchor, ksize, (h, w))
    mat = np.empty((c, dy * dx, n, h, w), dtype=x.dtype)
    for iy in range(dy):
        for ix in range(dx):
            mat[:, iy * dx + ix] = xp[:, :, oy + iy : oy + iy + h, ox + ix : ox + ix + w]
    return mat.reshape(c * dy * dx, n * h * w)


def corr2d(x: np.ndarray, w: np.ndarray, anchor: tuple[int, int],
           patches: np.ndarray = None) -> np.ndarray:
    """Anchored correlation: out[n,f,p] = sum_{s,d} w[f,s,d] * x[n,s,p+anchor+d].

    x: (N, S, H, W); w: (F, S, Dy, Dx); returns (N, F, H, W). A window
    matrix from a previous call on the same x/anchor/ksize can be passed
    to skip rebuilding it.
    """
    n, s, h, wd = x.shape
    f = w.shape[0]
    if patches is None:
        patches = window_matrix(x, anchor, w.shape[2:])
    flat = w.reshape(f, -1).astype(x.dtype, copy=False) @ patches
    return np.ascontiguousarray(flat.reshape(f, n, h, wd).transpose(1, 0, 2, 3))


def corr2d_weight_grad(dldy: np.ndarray, x: np.ndarray, anchor: tuple[int, int],
                       ksize: tuple[int, int], patches: np.ndarray = None) -> np.ndarray:
    """Gradient of corr2d w.r.t. w: (F, S, Dy, Dx)."""
    n, s, h, wd = x.shape
    f = dldy.shape[1]
    if patches is None:
        patches = window_matrix(x, anchor, ksize)
    dldy_flat = np.ascontiguousarray(dldy.transpose(1, 0, 2, 3)).reshape(f, -1)
    return (dldy_flat @ patches.T).reshape(f, s, *ksize)


def corr2d_input_grad(dldy: np.ndarray, w: np.ndarray, anchor: tuple[int, int]) -> np.ndarray:
    """Gradient of corr2d w.r.t. x: (N, S, H, W).

    The adjoint of an anchored correlation is another anchored correlation
    with the kernel flipped spatially, axes (F, S) swapped, and the anchor
    reflected about the origin of the window.
    """
    ay, ax = anchor
    dy, dx = w.shape[2], w.shape[3]
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return corr2d(dldy, wt, (-ay - dy + 1, -ax - dx + 1))


def _strided_window_view(xp: np.ndarray, origin: tuple[int, int], ksize: tuple[int, int],
                         out_hw: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """(C, N, Dy, Dx, Ho, Wo) view over a channel-first padded array."""
    c, n = xp.shape[:2]
    oy, ox = origin
    dy, dx = ksize
    ho, wo = out_hw
    sy, sx = stride
    base = xp[:, :, oy:, ox:]
    s0, s1, s2, s3 = base.strides
    return as_strided(base, shape=(c, n, dy, dx, ho, wo),
                      strides=(s0, s1, s2, s3, s2 * sy, s3 * sx), writeable=False)


def conv2d_strided(x: np.ndarray, w: np.ndarray, pad: int, stride: int) -> np.ndarray:
    """Symmetric zero-padded correlation with stride; out (N, F, Ho, Wo)."""
    n, s, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if stride == 1 and (ho, wo) == (h, wd):
        return corr2d(x, w, (-pad, -pad))
    xp, origin = _pad_channel_first(x, (-pad, -pad), (kh, kw), (ho, wo), (stride, stride))
    mat = np.empty((s, kh * kw, n, ho, wo), dtype=x.dtype)
    oy, ox = origin
    for iy in range(kh):
        for ix in range(kw):
            mat[:, iy * kw + ix] = xp[:, :, oy + iy : oy + iy + (ho - 1) * stride + 1 : stride,
                                      ox + ix : ox + ix + (wo - 1) * stride + 1 : stride]
    flat = w.reshape(f, -1).astype(x.dtype, copy=False) @ mat.reshape(s * kh * kw, -1)
    return np.ascontiguousarray(flat.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_strided_weight_grad(dldy: np.ndarray, x: np.ndarray, pad: int, stride: int,
                               ksize: tuple[int, int]) -> np.ndarray:
    n, s, h, wd = x.shape
    kh, kw = ksize
    ho, wo = dldy.shape[2], dldy.shape[3]
    if stride == 1 and (ho, wo) == (h, wd):
        return corr2d_weight_grad(dldy, x, (-pad, -pad), ksize)
    xp, origin = _pad_channel_first(x, (-pad, -pad), (kh, kw), (ho, wo), (stride, stride))
    v = _strided_window_view(xp, origin, (kh, kw), (ho, wo), (stride, stride))
    f = dldy.shape[1]
    # (F,N,Ho,Wo) . (C,N,kh,kw,Ho,Wo) over (N,Ho,Wo)
    return np.tensordot(dldy, v, axes=([0, 2, 3], [1, 4, 5]))


def conv2d_strided_input_grad(dldy: np.ndarray, w: np.ndarray, pad: int, stride: int,
                              in_hw: tuple[int, int]) -> np.ndarray:
    if stride == 1:
        kh = w.shape[2]
        kw = w.shape[3]
        wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return corr2d(dldy, wt, (pad - kh + 1, pad - kw + 1))
    # general stride: scatter into the padded input (rarely used; nets pool instead)
    n, f, ho, wo = dldy.shape
    s, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    h, wd = in_hw
    dxp = np.zeros((n, s, h + 2 * pad, wd + 2 * pad), dtype=dldy.dtype)
    contrib = np.tensordot(dldy, w.astype(dldy.dtype, copy=False), axes=([1], [0]))
    # contrib: (N, Ho, Wo, S, kh, kw)
    for oy in range(ho):
        for ox in range(wo):
            dxp[:, :, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw] += contrib[:, oy, ox]
    return dxp[:, :, pad : pad + h, pad : pad + wd]
