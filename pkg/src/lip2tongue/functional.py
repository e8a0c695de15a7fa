"""Differentiable layer operations built on :class:`~lip2tongue.tensor.Tensor`.

Image ops take ``[C, H, W]`` or batched ``[B, C, H, W]`` inputs; dense ops take
``[D]`` or ``[B, D]``. Convolution is cross-correlation (kernels are not
flipped).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, is_grad_enabled


def _batched(x: Tensor, ndim: int, op: str):
    if x.ndim == ndim - 1:
        return x.data[None], True
    if x.ndim == ndim:
        return x.data, False
    raise DimensionError(f"{op}: expected {ndim - 1}-d or {ndim}-d input, got shape {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is ``[C_in, H, W]`` or ``[B, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, kH, kW]``. Output spatial size is
    ``floor((H + 2*padding - kH) / stride) + 1``.
    """
    X, squeeze = _batched(x, 4, "conv2d")
    K = kernels.data
    if K.ndim != 4:
        raise DimensionError(f"conv2d: kernels must be 4-d [C_out, C_in, kH, kW], got {K.shape}")
    B, C, H, W = X.shape
    C_out, C_in, kh, kw = K.shape
    if C != C_in:
        raise DimensionError(f"conv2d: input channels (axis -3) = {C} but kernel expects {C_in}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp} (axes H, W)")
    if bias is not None and bias.shape != (C_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({C_out},)")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else X
    # im2col in [C, kh, kw, B, Ho, Wo] order: each tap is one strided copy of the input
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=X.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride].transpose(1, 0, 2, 3)
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    Kmat = K.reshape(C_out, -1)
    out = Kmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(C_out, B, Ho, Wo).transpose(1, 0, 2, 3))
    if squeeze:
        out = out[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    need_x = x.requires_grad
    if not (is_grad_enabled() and kernels.requires_grad):
        cols = None

    def bw(g):
        g4 = g[None] if squeeze else g
        gm = g4.transpose(1, 0, 2, 3).reshape(C_out, -1)
        dK = (gm @ cols.T).reshape(K.shape) if kernels.requires_grad else None
        dx = None
        if need_x:
            dcols = (Kmat.T @ gm).reshape(C, kh, kw, B, Ho, Wo)
            dxp = np.zeros((C, B, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[:, i, j]
            dx = dxp[:, :, padding : padding + H, padding : padding + W].transpose(1, 0, 2, 3)
            dx = np.ascontiguousarray(dx[0] if squeeze else dx)
        grads = [dx, dK]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._make(out, parents, bw, "conv2d")


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max over ``window x window`` patches; gradient goes to the first argmax."""
    stride = window if stride is None else stride
    X, squeeze = _batched(x, 4, "maxpool2d")
    B, C, H, W = X.shape
    if window < 1 or stride < 1:
        raise ConfigError(f"maxpool2d: window and stride must be >= 1 (got {window}, {stride})")
    if window > H or window > W:
        raise DimensionError(f"maxpool2d: window {window} exceeds input {H}x{W} (axes H, W)")
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1
    taps = [
        (i, j, X[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride])
        for i in range(window)
        for j in range(window)
    ]
    out = taps[0][2].copy()
    for _, _, view in taps[1:]:
        np.maximum(out, view, out=out)
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        ref = out[None] if squeeze else out
        dx = np.zeros((B, C, H, W), dtype=g.dtype)
        taken = np.zeros(ref.shape, dtype=bool)
        # scan taps in row-major order so ties go to the first maximum
        for i, j, view in taps:
            hit = (view == ref) & ~taken
            taken |= hit
            dx[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += np.where(hit, g4, 0)
        return (dx[0] if squeeze else dx,)

    return Tensor._make(np.ascontiguousarray(out), (x,), bw, "maxpool2d")


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Fully connected layer ``W @ x + b`` for ``x`` of shape ``[D_in]`` or ``[B, D_in]``."""
    X, squeeze = _batched(x, 2, "dense")
    if W.ndim != 2 or W.shape[1] != X.shape[1]:
        raise DimensionError(f"dense: weight {W.shape} does not accept input width {X.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"dense: bias {b.shape} != ({W.shape[0]},)")
    Wd = W.data
    out = X @ Wd.T
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def bw(g):
        g2 = g[None] if squeeze else g
        dx = g2 @ Wd if x.requires_grad else None
        if dx is not None and squeeze:
            dx = dx[0]
        grads = [dx, g2.T @ X if W.requires_grad else None]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor._make(out[0] if squeeze else out, parents, bw, "dense")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def leaky_relu(x: Tensor, slope: float = 0.3) -> Tensor:
    a = x.data
    pos = a >= 0
    slope = a.dtype.type(slope)
    out = np.where(pos, a, a * slope)
    return Tensor._make(out, (x,), lambda g: (np.where(pos, g, g * slope),), "leaky_relu")


def activation(x: Tensor, kind: str, slope: float = 0.3) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ConfigError(f"unknown activation {kind!r}")


@dataclass
class BatchNormStats:
    """Running per-channel statistics used in inference mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormStats":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over axis 1 of ``[B, C]`` or ``[B, C, H, W]``.

    In train mode the batch statistics normalize the input and the running
    statistics move by ``momentum`` toward them (unbiased variance). Infer mode
    reads the running statistics only.
    """
    a = x.data
    if a.ndim not in (2, 4):
        raise DimensionError(f"batchnorm: expected [B, C] or [B, C, H, W], got {a.shape}")
    C = a.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm: gamma/beta must be ({C},), got {gamma.shape}/{beta.shape}")
    axes = (0,) if a.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if a.ndim == 2 else (1, C, 1, 1)
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if mode == "train":
        if a.shape[0] < 2:
            raise ConfigError(f"batchnorm: train mode needs batch size >= 2, got {a.shape[0]}")
        n = a.size // C
        mu = a.mean(axis=axes, keepdims=True)
        xc = a - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = xhat * g_ + b_
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu.reshape(C)
        stats.var[...] = (1 - momentum) * stats.var + momentum * var.reshape(C) * (n / max(n - 1, 1))

        def bw(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * g_
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return dx, dgamma, dbeta

    elif mode == "infer":
        inv = (1.0 / np.sqrt(stats.var + eps)).astype(a.dtype).reshape(bshape)
        xhat = (a - stats.mean.astype(a.dtype).reshape(bshape)) * inv
        out = xhat * g_ + b_

        def bw(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ConfigError(f"batchnorm: mode must be 'train' or 'infer', got {mode!r}")

    return Tensor._make(out.astype(a.dtype, copy=False), (x, gamma, beta), bw, "batchnorm")


def dropout(x: Tensor, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` so inference is the identity."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x
    if mode != "train":
        raise ConfigError(f"dropout: mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        raise ConfigError("dropout in train mode needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.data.dtype)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared elementwise differences."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype)

    def bw(g):
        d = (2.0 / n) * g * diff
        return d.astype(pred.data.dtype, copy=False), -d.astype(target.data.dtype, copy=False)

    return Tensor._make(out, (pred, target), bw, "mse_loss")
