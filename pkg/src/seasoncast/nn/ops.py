"""Differentiable array operations for the forecasting networks.

All operations work on NCHW batches.  Convolutions are fixed at 3x3, stride 1,
and pad by one cell per side before the valid convolution; with the default
``circular-both`` mode the padding wraps both axes so the grid behaves like a
torus.  ``circular-lon-reflect-lat`` instead mirrors the boundary rows on the
latitude axis while keeping longitude circular.

The gemm-based forward is used everywhere; ``reference=True`` recomputes the
convolution in float64 by accumulating the 9*C_in kernel taps in a fixed
(channel, row, col) order, which makes the result bit-comparable against an
independent scalar loop.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .core import Tensor, accumulate_grad, make_node

PADDING_MODES = ("circular-both", "circular-lon-reflect-lat")


def _data(t):
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def pad_one(x: np.ndarray, mode: str = "circular-both") -> np.ndarray:
    """Pad an NCHW batch by one cell per spatial side."""
    if mode == "circular-both":
        return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="wrap")
    if mode == "circular-lon-reflect-lat":
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 0)), mode="symmetric")
        return np.pad(xp, ((0, 0), (0, 0), (0, 0), (1, 1)), mode="wrap")
    raise DimensionError(f"unknown padding mode {mode!r}")


def _fold_padding(dxp: np.ndarray, mode: str) -> np.ndarray:
    """Route halo-cell gradients back to their source cells (adjoint of pad_one)."""
    h = dxp.shape[2] - 2
    w = dxp.shape[3] - 2
    rows = dxp[:, :, 1 : h + 1, :].copy()
    if mode == "circular-both":
        rows[:, :, h - 1, :] += dxp[:, :, 0, :]
        rows[:, :, 0, :] += dxp[:, :, h + 1, :]
    else:
        rows[:, :, 0, :] += dxp[:, :, 0, :]
        rows[:, :, h - 1, :] += dxp[:, :, h + 1, :]
    out = rows[:, :, :, 1 : w + 1].copy()
    out[:, :, :, w - 1] += rows[:, :, :, 0]
    out[:, :, :, 0] += rows[:, :, :, w + 1]
    return out


def conv2d_circular_reference(x, weight, bias, padding_mode="circular-both") -> np.ndarray:
    """Float64 forward accumulating the kernel taps in fixed order.

    Equals a valid 3x3 convolution of the explicitly padded input, bit for
    bit, when the comparison accumulates taps in the same
    ascending (c_in, k_row, k_col) order.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    n, c_in, h, wid = x.shape
    c_out = w.shape[0]
    xp = pad_one(x, padding_mode)
    out = np.zeros((n, c_out, h, wid), dtype=np.float64)
    for ci in range(c_in):
        for ki in range(3):
            for kj in range(3):
                out += (
                    w[:, ci, ki, kj][None, :, None, None]
                    * xp[:, ci, ki : ki + h, kj : kj + wid][:, None, :, :]
                )
    out += b[None, :, None, None]
    return out


def conv2d_circular(x, weight, bias, padding_mode="circular-both", reference=False) -> Tensor:
    """3x3 stride-1 convolution with wrap-around padding.

    Output keeps the input's spatial shape.  weight is (C_out, C_in, 3, 3),
    bias is (C_out,).
    """
    xd, wd, bd = _data(x), _data(weight), _data(bias)
    if xd.ndim != 4:
        raise DimensionError(f"conv input must be NCHW, got shape {xd.shape}")
    if wd.ndim != 4 or wd.shape[2:] != (3, 3):
        raise DimensionError(f"conv weight must be (C_out, C_in, 3, 3), got {wd.shape}")
    n, c_in, h, w = xd.shape
    c_out = wd.shape[0]
    if wd.shape[1] != c_in:
        raise DimensionError(
            f"conv expects {wd.shape[1]} input channels, got {c_in}"
        )
    if bd.shape != (c_out,):
        raise DimensionError(f"conv bias must be ({c_out},), got {bd.shape}")

    xp = pad_one(xd, padding_mode)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N,C,H,W,3,3 view
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c_in * 9)
    wmat = wd.reshape(c_out, c_in * 9)
    if reference:
        out = conv2d_circular_reference(xd, wd, bd, padding_mode)
    else:
        out = (col @ wmat.T).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
        out = out + bd[None, :, None, None]

    def backward_fn(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h * w, c_out)
        if isinstance(weight, Tensor) and weight.requires_grad:
            accumulate_grad(weight, (gmat.T @ col).reshape(wd.shape))
        if isinstance(bias, Tensor) and bias.requires_grad:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3)))
        if isinstance(x, Tensor) and x.requires_grad:
            dcol = (gmat @ wmat).reshape(n, h, w, c_in, 3, 3)
            dxp = np.zeros_like(xp)
            for ki in range(3):
                for kj in range(3):
                    dxp[:, :, ki : ki + h, kj : kj + w] += dcol[:, :, :, :, ki, kj].transpose(
                        0, 3, 1, 2
                    )
            accumulate_grad(x, _fold_padding(dxp, padding_mode))

    parents = [t for t in (x, weight, bias) if isinstance(t, Tensor)]
    return make_node(out, parents, backward_fn)


def relu(x) -> Tensor:
    xd = _data(x)
    out = np.maximum(xd, 0)

    def backward_fn(g):
        accumulate_grad(x, g * (xd > 0))

    parents = [x] if isinstance(x, Tensor) else []
    return make_node(out, parents, backward_fn)


def maxpool2(x) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window cell."""
    xd = _data(x)
    if xd.ndim != 4:
        raise DimensionError(f"maxpool input must be NCHW, got shape {xd.shape}")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    xr = xd.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = xr.argmax(axis=4)
    out = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]

    def backward_fn(g):
        dxr = np.zeros_like(xr)
        np.put_along_axis(dxr, idx[..., None], g[..., None], axis=4)
        dx = (
            dxr.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        accumulate_grad(x, dx)

    parents = [x] if isinstance(x, Tensor) else []
    return make_node(out, parents, backward_fn)


def upsample2(x) -> Tensor:
    """Nearest-neighbor 2x upsampling (each cell becomes a 2x2 block)."""
    xd = _data(x)
    if xd.ndim != 4:
        raise DimensionError(f"upsample input must be NCHW, got shape {xd.shape}")
    n, c, h, w = xd.shape
    out = xd.repeat(2, axis=2).repeat(2, axis=3)

    def backward_fn(g):
        accumulate_grad(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    parents = [x] if isinstance(x, Tensor) else []
    return make_node(out, parents, backward_fn)


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    datas = [_data(p) for p in parts]
    sizes = [d.shape[1] for d in datas]
    out = np.concatenate(datas, axis=1)
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if isinstance(p, Tensor):
                accumulate_grad(p, g[:, lo:hi])

    parents = [p for p in parts if isinstance(p, Tensor)]
    return make_node(out, parents, backward_fn)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over every element of the batch."""
    pd, td = _data(pred), _data(target)
    if pd.shape != td.shape:
        raise DimensionError(f"shape mismatch: pred {pd.shape} vs target {td.shape}")
    diff = pd - td
    out = np.mean(diff * diff, dtype=np.float64)

    def backward_fn(g):
        scale = np.asarray(2.0 * g / diff.size, dtype=pd.dtype)
        if isinstance(pred, Tensor):
            accumulate_grad(pred, scale * diff)
        if isinstance(target, Tensor):
            accumulate_grad(target, -scale * diff)

    parents = [t for t in (pred, target) if isinstance(t, Tensor)]
    return make_node(np.asarray(out), parents, backward_fn)


def batchnorm_train(x, gamma, beta, eps):
    """Normalize by batch statistics; returns (out, mean64, var64).

    Statistics accumulate in float64 and are cast back to the working dtype;
    variances are population (divide-by-N).
    """
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    _check_bn_shapes(xd, gd, bd)
    mean64 = xd.mean(axis=(0, 2, 3), dtype=np.float64)
    var64 = xd.var(axis=(0, 2, 3), dtype=np.float64)
    mu = mean64.astype(xd.dtype)
    var = var64.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gd[None, :, None, None] * xhat + bd[None, :, None, None]
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]

    def backward_fn(g):
        if isinstance(gamma, Tensor) and gamma.requires_grad:
            accumulate_grad(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if isinstance(beta, Tensor) and beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=(0, 2, 3)))
        if isinstance(x, Tensor) and x.requires_grad:
            dxhat = g * gd[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (inv[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
            accumulate_grad(x, dx)

    parents = [t for t in (x, gamma, beta) if isinstance(t, Tensor)]
    return make_node(out, parents, backward_fn), mean64, var64


def batchnorm_eval(x, gamma, beta, running_mean, running_var, eps) -> Tensor:
    """Normalize by stored running statistics (pure, batch-independent)."""
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    _check_bn_shapes(xd, gd, bd)
    rm = np.asarray(running_mean, dtype=xd.dtype)
    rv = np.asarray(running_var, dtype=xd.dtype)
    inv = 1.0 / np.sqrt(rv + np.asarray(eps, dtype=xd.dtype))
    xhat = (xd - rm[None, :, None, None]) * inv[None, :, None, None]
    out = gd[None, :, None, None] * xhat + bd[None, :, None, None]

    def backward_fn(g):
        if isinstance(gamma, Tensor) and gamma.requires_grad:
            accumulate_grad(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if isinstance(beta, Tensor) and beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=(0, 2, 3)))
        if isinstance(x, Tensor) and x.requires_grad:
            accumulate_grad(x, g * (gd * inv)[None, :, None, None])

    parents = [t for t in (x, gamma, beta) if isinstance(t, Tensor)]
    return make_node(out, parents, backward_fn)


def _check_bn_shapes(xd, gd, bd):
    if xd.ndim != 4:
        raise DimensionError(f"batchnorm input must be NCHW, got shape {xd.shape}")
    c = xd.shape[1]
    if gd.shape != (c,) or bd.shape != (c,):
        raise DimensionError(
            f"batchnorm gamma/beta must be ({c},), got {gd.shape} and {bd.shape}"
        )
