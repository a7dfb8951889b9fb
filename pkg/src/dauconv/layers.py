"""Baseline network building blocks: dense convolution, 2x2 max-pooling,
batch normalization, fully connected layer, ReLU and softmax cross-entropy.

All functions are pure (batchnorm optionally updates running statistics
in place during training) and return whatever cache their backward needs.
Convolution is correlation: no kernel flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._convops import (
    conv2d_strided,
    conv2d_strided_input_grad,
    conv2d_strided_weight_grad,
)
from .tensor import validate_nchw


@dataclass
class ConvParams:
    weights: np.ndarray  # (F, S, kH, kW), odd kH and kW
    bias: np.ndarray  # (F,)
    padding: int = 0
    stride: int = 1

    def validate(self) -> None:
        if self.weights.ndim != 4:
            raise ValueError("conv weights must be (F, S, kH, kW)")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel dims must be odd, got {kh}x{kw}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite conv parameters")


def conv_forward(x: np.ndarray, p: ConvParams):
    validate_nchw(x)
    if x.shape[1] != p.weights.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, conv expects {p.weights.shape[1]}")
    y = conv2d_strided(x, p.weights, p.padding, p.stride)
    y += p.bias.astype(x.dtype)[None, :, None, None]
    return y, x


def conv_backward(dldy: np.ndarray, x: np.ndarray, p: ConvParams, need_input_grad: bool = True):
    dw = conv2d_strided_weight_grad(dldy, x, p.padding, p.stride, p.weights.shape[2:])
    dbias = dldy.sum(axis=(0, 2, 3))
    if need_input_grad:
        dx = conv2d_strided_input_grad(dldy, p.weights, p.padding, p.stride, x.shape[2:])
    else:
        dx = np.zeros_like(x)
    return dw, dbias, dx


def maxpool2_forward(x: np.ndarray):
    """2x2/stride-2 max; odd trailing rows/cols are padded with -inf."""
    validate_nchw(x)
    n, c, h, w = x.shape
    he, we = h + h % 2, w + w % 2
    if (he, we) != (h, w):
        xp = np.full((n, c, he, we), -np.inf, dtype=x.dtype)
        xp[:, :, :h, :w] = x
    else:
        xp = x
    win = xp.reshape(n, c, he // 2, 2, we // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, he // 2, we // 2, 4)
    idx = win.argmax(axis=-1)  # first max wins: lowest flat index in the window
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, (h, w))


def maxpool2_backward(dldy: np.ndarray, cache):
    idx, (h, w) = cache
    n, c, ho, wo = dldy.shape
    dwin = np.zeros((n, c, ho, wo, 4), dtype=dldy.dtype)
    np.put_along_axis(dwin, idx[..., None], dldy[..., None], axis=-1)
    dxp = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    return dxp[:, :, :h, :w]


@dataclass
class BatchNormState:
    scale: np.ndarray  # (C,)
    shift: np.ndarray  # (C,)
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9  # fraction of the old running statistic kept per batch

    @staticmethod
    def create(channels: int, dtype=np.float32) -> "BatchNormState":
        return BatchNormState(
            np.ones(channels, dtype=dtype), np.zeros(channels, dtype=dtype),
            np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype),
        )

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if (self.running_var < 0).any():
            raise ValueError("negative running variance")


def batchnorm_forward(x: np.ndarray, st: BatchNormState, training: bool):
    """Per-channel normalization over (N, H, W); inference uses running stats."""
    validate_nchw(x)
    n, c, h, w = x.shape
    if training:
        if n * h * w < 2:
            raise ValueError("batchnorm needs at least 2 values per channel in training")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        st.running_mean = (st.momentum * st.running_mean + (1 - st.momentum) * mean).astype(st.running_mean.dtype)
        st.running_var = (st.momentum * st.running_var + (1 - st.momentum) * var).astype(st.running_var.dtype)
    else:
        mean, var = st.running_mean, st.running_var
    inv_std = 1.0 / np.sqrt(var + st.epsilon)
    xhat = (x - mean[None, :, None, None].astype(x.dtype)) * inv_std[None, :, None, None].astype(x.dtype)
    y = st.scale.astype(x.dtype)[None, :, None, None] * xhat + st.shift.astype(x.dtype)[None, :, None, None]
    return y, (xhat, inv_std.astype(x.dtype), training)


def batchnorm_backward(dldy: np.ndarray, cache, st: BatchNormState):
    xhat, inv_std, training = cache
    if not training:
        raise ValueError("backward is only defined for the training-mode forward")
    m = dldy.shape[0] * dldy.shape[2] * dldy.shape[3]
    dshift = dldy.sum(axis=(0, 2, 3))
    dscale = (dldy * xhat).sum(axis=(0, 2, 3))
    gamma = st.scale.astype(dldy.dtype)[None, :, None, None]
    s1 = dshift.astype(dldy.dtype)[None, :, None, None]
    s2 = dscale.astype(dldy.dtype)[None, :, None, None]
    dx = gamma * inv_std[None, :, None, None] / m * (m * dldy - s1 - xhat * s2)
    return dscale, dshift, dx


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """x: (N, D); weights: (O, D)."""
    return x @ weights.T.astype(x.dtype) + bias.astype(x.dtype)


def fc_backward(dldy: np.ndarray, x: np.ndarray, weights: np.ndarray):
    dw = dldy.T @ x
    dbias = dldy.sum(axis=0)
    dx = dldy @ weights.astype(dldy.dtype)
    return dw, dbias, dx


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dldy: np.ndarray, mask: np.ndarray):
    return dldy * mask


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    n, classes = logits.shape
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"labels must lie in [0, {classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))
    loss = float(nll.mean())
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)
