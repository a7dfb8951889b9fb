"""Discretized zero-mean Gaussian kernel and its mean-derivative kernels.

A bank holds the aggregation kernel g for one fixed sigma together with
dgx and dgy, the derivatives of the Gaussian with respect to its mean.
The same bank is shared by every unit of a layer: only displacements and
amplifications vary per unit, the aggregation perimeter does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import validate_nchw


@dataclass(frozen=True)
class GaussianKernelBank:
    """Kernels on the integer grid [-radius, radius]^2.

    g sums to exactly 1 after truncation. All three kernels are exact
    outer products of the stored 1-D factors, so blurs run as two 1-D
    passes; dgx and dgy have zero sum up to float cancellation (their
    odd factor pairs off exactly), so constant inputs produce (to
    roundoff) zero displacement gradient. Kernels are stored float64 and
    cast to the activation dtype at use.
    """

    sigma: float
    radius: int
    g: np.ndarray
    dgx: np.ndarray
    dgy: np.ndarray
    g1: np.ndarray  # normalized 1-D marginal
    dg1: np.ndarray  # (u / sigma^2) * g1, the mean-derivative factor


def truncation_radius(sigma: float) -> int:
    """Kernel half-extent; 3 sigma keeps the discarded mass below 1%."""
    return max(1, math.ceil(3.0 * sigma))


def build_bank(sigma: float) -> GaussianKernelBank:
    """Build the kernel bank for a given aggregation sigma (pixels)."""
    if not math.isfinite(sigma) or sigma <= 0:
        raise ValueError(f"sigma must be finite and > 0, got {sigma}")
    radius = truncation_radius(sigma)
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    e = np.exp(-(u**2) / (2.0 * sigma**2))
    g1 = e / e.sum()
    dg1 = (u / sigma**2) * g1
    # outer products of normalized 1-D factors: unit sum and exactly separable
    g = np.outer(g1, g1)
    dgx = np.outer(g1, dg1)
    dgy = np.outer(dg1, g1)
    return GaussianKernelBank(sigma=float(sigma), radius=radius, g=g, dgx=dgx, dgy=dgy,
                              g1=g1, dg1=dg1)


def _correlate2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel zero-padded 2-D correlation over the last two axes."""
    r = kernel.shape[0] // 2
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * r, w + 2 * r), dtype=x.dtype)
    xp[:, :, r : r + h, r : r + w] = x
    k = kernel.astype(x.dtype)
    out = np.zeros_like(x)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            kv = k[dy, dx]
            if kv != 0:
                out += kv * xp[:, :, dy : dy + h, dx : dx + w]
    return out


def _correlate1d(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Zero-padded 1-D correlation along a spatial axis (2 = rows, 3 = cols)."""
    r = len(taps) // 2
    n, c, h, w = x.shape
    if axis == 2:
        xp = np.zeros((n, c, h + 2 * r, w), dtype=x.dtype)
        xp[:, :, r : r + h, :] = x
    else:
        xp = np.zeros((n, c, h, w + 2 * r), dtype=x.dtype)
        xp[:, :, :, r : r + w] = x
    k = taps.astype(x.dtype)
    out = k[0] * (xp[:, :, 0:h, :] if axis == 2 else xp[:, :, :, 0:w])
    for i in range(1, len(taps)):
        if axis == 2:
            out += k[i] * xp[:, :, i : i + h, :]
        else:
            out += k[i] * xp[:, :, :, i : i + w]
    return out


def _separable_correlate(x: np.ndarray, row_taps: np.ndarray, col_taps: np.ndarray) -> np.ndarray:
    return _correlate1d(_correlate1d(x, row_taps, 2), col_taps, 3)


def blur_channels(x: np.ndarray, bank: GaussianKernelBank) -> np.ndarray:
    """Correlate every (n, c) plane with g; same spatial dims, zero padding."""
    validate_nchw(x)
    return _separable_correlate(x, bank.g1, bank.g1)


def blur_derivative_channels(x: np.ndarray, bank: GaussianKernelBank, axis: str) -> np.ndarray:
    """Correlate every plane with dgx (axis='x') or dgy (axis='y')."""
    validate_nchw(x)
    if axis == "x":
        return _separable_correlate(x, bank.g1, bank.dg1)
    if axis == "y":
        return _separable_correlate(x, bank.dg1, bank.g1)
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
