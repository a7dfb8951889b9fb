"""Convolution layer whose filters are mixtures of displaced Gaussian units.

Each 2-D filter (one per output-feature/input-channel pair) is a sum of K
units: an amplification w and a continuous displacement mu = (mu_x, mu_y),
all sharing one fixed Gaussian aggregation sigma. The forward fast path
blurs the input once per channel and samples the blurred maps at the
displacements with bilinear weights (gather convention: output pixel
(y, x) reads the blurred input at (y + mu_y, x + mu_x); out-of-bounds
samples read 0).

The sampling of all units is materialized as one sparse offset-window
kernel per layer and evaluated with a GEMM; this is numerically the same
computation as per-unit bilinear gathers, just batched. A slow explicit
dense-filter oracle is provided for equivalence testing and never shares
the fast path's machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._convops import corr2d, corr2d_input_grad, corr2d_weight_grad, window_matrix
from .gaussian import GaussianKernelBank, _correlate2d_same, blur_channels, blur_derivative_channels
from .tensor import validate_nchw

DEFAULT_MAX_DISPLACEMENT = 4.0
INIT_GRID_SPACING = 2.5


@dataclass
class DauLayerParams:
    """Learnable state of one layer.

    w: (F, S, K) amplifications; mu: (F, S, K, 2) displacements as
    (mu_x, mu_y) in pixels; bias: (F,); active: (F, S, K) mask cleared by
    pruning (inactive units are excluded from the forward pass and from
    parameter counts). init_points records the K-unit initialization grid
    for analysis overlays.
    """

    out_features: int
    in_channels: int
    units: int
    w: np.ndarray
    mu: np.ndarray
    bias: np.ndarray
    sigma: float
    max_displacement: float = DEFAULT_MAX_DISPLACEMENT
    active: np.ndarray = None
    init_points: np.ndarray = None

    def __post_init__(self):
        if self.active is None:
            self.active = np.ones((self.out_features, self.in_channels, self.units), dtype=bool)
        if self.init_points is None:
            self.init_points = unit_grid(self.units)

    def validate(self) -> None:
        f, s, k = self.out_features, self.in_channels, self.units
        if self.w.shape != (f, s, k) or self.mu.shape != (f, s, k, 2) or self.bias.shape != (f,):
            raise ValueError("parameter array shapes do not match layer dims")
        if not (np.isfinite(self.w).all() and np.isfinite(self.mu).all()):
            raise ValueError("non-finite layer parameters")
        if np.abs(self.mu).max(initial=0.0) > self.max_displacement + 1e-6:
            raise ValueError("displacement outside the clamp radius")

    def astype(self, dtype) -> "DauLayerParams":
        return DauLayerParams(
            self.out_features, self.in_channels, self.units,
            self.w.astype(dtype), self.mu.astype(dtype), self.bias.astype(dtype),
            self.sigma, self.max_displacement,
            self.active.copy(), self.init_points.copy(),
        )

    def copy(self) -> "DauLayerParams":
        return self.astype(self.w.dtype)


@dataclass
class DauGradients:
    dw: np.ndarray
    dmu: np.ndarray
    dbias: np.ndarray
    dinput: np.ndarray


@dataclass
class DauForwardCache:
    """Per-forward state the backward pass needs. Derivative-blurred maps
    are filled lazily on the first analytic-mode backward call."""

    x: np.ndarray
    xblur: np.ndarray
    w_off: np.ndarray
    anchor: tuple[int, int]
    shape_fsk: tuple[int, int, int]
    patches: np.ndarray = None  # window matrix of xblur, shared with backward
    xdgx: np.ndarray = None
    xdgy: np.ndarray = None


def unit_grid(k: int) -> np.ndarray:
    """Centered initialization grid spanning +-1.25 px, row-major in y then x.

    k=1 -> origin; k=2 -> (+-1.25, 0); k=4 -> (+-1.25, +-1.25);
    k=6 -> x in {-1.25, 0, 1.25} x y in {+-1.25}. Symmetric units sit
    2.5 px apart, which is where freshly initialized mass shows up in
    distance histograms.
    """
    if k < 1:
        raise ValueError("units per filter must be >= 1")
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    half = INIT_GRID_SPACING / 2.0
    xs = np.linspace(-half, half, cols) if cols > 1 else np.zeros(1)
    ys = np.linspace(-half, half, rows) if rows > 1 else np.zeros(1)
    pts = [(x, y) for y in ys for x in xs]
    return np.asarray(pts[:k], dtype=np.float64)


def init_params(out_features: int, in_channels: int, units: int, sigma: float,
                max_displacement: float, rng: np.random.Generator,
                dtype=np.float32) -> DauLayerParams:
    """Fan-based uniform init for w (fan counted in units, S*K in / F*K out);
    displacements start on the fixed grid, bias at zero."""
    grid = unit_grid(units)
    limit = math.sqrt(6.0 / (in_channels * units + out_features * units))
    w = rng.uniform(-limit, limit, size=(out_features, in_channels, units)).astype(dtype)
    mu = np.broadcast_to(grid.astype(dtype), (out_features, in_channels, units, 2)).copy()
    bias = np.zeros(out_features, dtype=dtype)
    return DauLayerParams(out_features, in_channels, units, w, mu, bias,
                          float(sigma), float(max_displacement), init_points=grid)


def bilinear_weights(mu: tuple[float, float]):
    """Base cell and 2x2 interpolation weights for a real displacement.

    Returns ((floor(mu_x), floor(mu_y)), a) with a[i][j] weighting the
    sample at (floor(mu_x) + i, floor(mu_y) + j); the weights sum to 1.
    """
    mx, my = float(mu[0]), float(mu[1])
    bx, by = math.floor(mx), math.floor(my)
    fx, fy = mx - bx, my - by
    a = np.array([[(1 - fx) * (1 - fy), (1 - fx) * fy],
                  [fx * (1 - fy), fx * fy]])
    return (bx, by), a


def _bilinear_arrays(mu: np.ndarray):
    """Vectorized bilinear decomposition.

    Returns (bx, by) int arrays shaped like mu[..., 0] and weight/derivative
    arrays of shape mu.shape[:-1] + (2, 2) indexed [..., i, j] with i the x
    tap and j the y tap.
    """
    mx, my = mu[..., 0], mu[..., 1]
    bx = np.floor(mx).astype(np.int64)
    by = np.floor(my).astype(np.int64)
    fx = (mx - bx)[..., None, None]
    fy = (my - by)[..., None, None]
    i = np.array([0.0, 0.0, 1.0, 1.0]).reshape(2, 2)  # i varies along axis -2
    j = np.array([0.0, 1.0, 0.0, 1.0]).reshape(2, 2)
    wx = (1 - i) * (1 - fx) + i * fx
    wy = (1 - j) * (1 - fy) + j * fy
    a = wx * wy
    da_dfx = (2 * i - 1) * wy  # d a / d fx  (slope of the x factor)
    da_dfy = (2 * j - 1) * wx
    return bx, by, a, da_dfx, da_dfy


def _splat_offset_kernel(p: DauLayerParams, dtype):
    """Accumulate every active unit's bilinear taps into one offset-window
    kernel (F, S, Dy, Dx) plus the window anchor (y0, x0)."""
    bx, by, a, _, _ = _bilinear_arrays(p.mu.astype(np.float64))
    act = p.active
    if not act.any():
        return np.zeros((p.out_features, p.in_channels, 1, 1), dtype=dtype), (0, 0)
    y0 = int(by[act].min())
    y1 = int(by[act].max()) + 1
    x0 = int(bx[act].min())
    x1 = int(bx[act].max()) + 1
    w_off = np.zeros((p.out_features, p.in_channels, y1 - y0 + 1, x1 - x0 + 1), dtype=np.float64)
    wa = np.where(act, p.w.astype(np.float64), 0.0)[..., None, None] * a
    ii = np.arange(2).reshape(2, 1)
    jj = np.arange(2).reshape(1, 2)
    rows = by[..., None, None] - y0 + jj
    cols = bx[..., None, None] - x0 + ii
    fidx = np.arange(p.out_features)[:, None, None, None, None]
    sidx = np.arange(p.in_channels)[None, :, None, None, None]
    np.add.at(w_off, (fidx, sidx, rows, cols), wa)
    return w_off.astype(dtype), (y0, x0)


def dau_forward(x: np.ndarray, p: DauLayerParams, bank: GaussianKernelBank):
    """Pre-activation output (N, F, H, W) plus the cache for backward."""
    validate_nchw(x)
    if x.shape[1] != p.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {p.in_channels}")
    xblur = blur_channels(x, bank)
    w_off, anchor = _splat_offset_kernel(p, x.dtype)
    patches = window_matrix(xblur, anchor, w_off.shape[2:])
    y = corr2d(xblur, w_off, anchor, patches=patches)
    y += p.bias.astype(x.dtype)[None, :, None, None]
    cache = DauForwardCache(x, xblur, w_off, anchor,
                            (p.out_features, p.in_channels, p.units), patches=patches)
    return y, cache


def dau_forward_oracle(x: np.ndarray, p: DauLayerParams, bank: GaussianKernelBank) -> np.ndarray:
    """Reference path: materialize each mixture filter as a dense kernel
    (bilinear taps convolved with g) and correlate the raw input with it.

    Kept deliberately naive and independent of the fast path; used only
    for verification.
    """
    validate_nchw(x)
    if x.shape[1] != p.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {p.in_channels}")
    rk = int(math.ceil(p.max_displacement)) + bank.radius + 1
    rg = bank.radius
    side = 2 * rk + 1
    n, _, h, wd = x.shape
    y = np.zeros((n, p.out_features, h, wd), dtype=x.dtype)
    g = bank.g
    for f in range(p.out_features):
        for s in range(p.in_channels):
            kern = np.zeros((side, side), dtype=np.float64)
            for k in range(p.units):
                if not p.active[f, s, k]:
                    continue
                (bxc, byc), a = bilinear_weights(p.mu[f, s, k])
                for i in range(2):
                    for j in range(2):
                        cy = rk + byc + j
                        cx = rk + bxc + i
                        kern[cy - rg : cy + rg + 1, cx - rg : cx + rg + 1] += (
                            float(p.w[f, s, k]) * a[i][j] * g
                        )
            y[:, f] += _correlate2d_same(x[:, s : s + 1], kern)[:, 0]
    y += p.bias.astype(x.dtype)[None, :, None, None]
    return y


def _gather_window(dw_off: np.ndarray, p: DauLayerParams, anchor: tuple[int, int]):
    """Per-unit 2x2 window samples of an offset-kernel-shaped gradient array."""
    bx, by, a, da_dfx, da_dfy = _bilinear_arrays(p.mu.astype(np.float64))
    y0, x0 = anchor
    ii = np.arange(2).reshape(2, 1)
    jj = np.arange(2).reshape(1, 2)
    rows = by[..., None, None] - y0 + jj
    cols = bx[..., None, None] - x0 + ii
    fidx = np.arange(p.out_features)[:, None, None, None, None]
    sidx = np.arange(p.in_channels)[None, :, None, None, None]
    taps = dw_off[fidx, sidx, rows, cols]
    return taps, a, da_dfx, da_dfy


def dau_backward(dldy: np.ndarray, cache: DauForwardCache, p: DauLayerParams,
                 bank: GaussianKernelBank, dmu_mode: str = "interp",
                 need_input_grad: bool = True) -> DauGradients:
    """Gradients for w, mu, bias and the input.

    dmu_mode 'interp' differentiates the bilinear sampling exactly;
    'analytic' uses the continuous Gaussian mean derivative (sampling the
    derivative-blurred input), which matches 'interp' on smooth inputs.
    need_input_grad=False skips the input gradient (first layer of a
    network), which is its single most expensive piece.
    """
    if cache.shape_fsk != (p.out_features, p.in_channels, p.units):
        raise ValueError("cache does not belong to this layer")
    n, f, h, wd = dldy.shape
    if (f, h, wd) != (p.out_features,) + cache.x.shape[2:] or n != cache.x.shape[0]:
        raise ValueError("upstream gradient shape does not match the forward output")
    ksize = cache.w_off.shape[2:]
    dw_off = corr2d_weight_grad(dldy, cache.xblur, cache.anchor, ksize, patches=cache.patches)
    cache.patches = None  # largest buffer in the cache; one backward per forward
    taps, a, da_dfx, da_dfy = _gather_window(dw_off.astype(np.float64), p, cache.anchor)
    dw = (taps * a).sum(axis=(-1, -2))
    dw[~p.active] = 0.0

    dmu = np.empty_like(p.mu, dtype=np.float64)
    if dmu_mode == "interp":
        dmu[..., 0] = (taps * da_dfx).sum(axis=(-1, -2))
        dmu[..., 1] = (taps * da_dfy).sum(axis=(-1, -2))
    elif dmu_mode == "analytic":
        if cache.xdgx is None:
            cache.xdgx = blur_derivative_channels(cache.x, bank, "x")
            cache.xdgy = blur_derivative_channels(cache.x, bank, "y")
        for axis, xd in ((0, cache.xdgx), (1, cache.xdgy)):
            dkd = corr2d_weight_grad(dldy, xd, cache.anchor, ksize)
            taps_d, _, _, _ = _gather_window(dkd.astype(np.float64), p, cache.anchor)
            dmu[..., axis] = (taps_d * a).sum(axis=(-1, -2))
    else:
        raise ValueError(f"unknown dmu_mode {dmu_mode!r}")
    dmu *= np.where(p.active, p.w, 0.0).astype(np.float64)[..., None]

    dbias = dldy.sum(axis=(0, 2, 3))
    if need_input_grad:
        dxblur = corr2d_input_grad(dldy, cache.w_off, cache.anchor)
        dinput = blur_channels(dxblur, bank)  # g is symmetric: the blur is self-adjoint
    else:
        dinput = np.zeros_like(cache.x)
    return DauGradients(
        dw.astype(p.w.dtype), dmu.astype(p.mu.dtype),
        dbias.astype(p.bias.dtype), dinput,
    )


def scale_displacements(p: DauLayerParams, factor: float) -> DauLayerParams:
    """Rescale all displacements (and the clamp radius) for a resolution
    change; amplifications and biases are untouched."""
    if not math.isfinite(factor) or factor <= 0:
        raise ValueError(f"scale factor must be finite and > 0, got {factor}")
    out = p.copy()
    out.mu = (p.mu.astype(np.float64) * factor).astype(p.mu.dtype)
    out.max_displacement = float(p.max_displacement * factor)
    out.init_points = p.init_points * factor
    return out
