"""Differentiable operators on NCHW tensors.

Convolutions use an im2col formulation: windows are unfolded into a matrix
and contracted with the flattened kernel by a single matmul. The backward
pass folds column gradients back with strided accumulation (col2im).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, check_finite, make_result

__all__ = [
    "PoolIndices",
    "conv2d",
    "transposed_conv2d",
    "max_pool_2x2",
    "max_unpool_2x2",
    "concat_channels",
    "activation",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "batch_norm",
    "bce_with_logits",
]


def _require_rank4(t: Tensor, what: str) -> None:
    if t.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (n, c, h, w), got shape {t.shape}")


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(n, c, H, W) -> (n, c*k*k, oh*ow) patch columns, channel-major."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(cols: np.ndarray, padded_shape: tuple, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the padded grid."""
    n, c = padded_shape[:2]
    cols = cols.reshape(n, c, k, k, oh, ow)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return out


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """2D cross-correlation. ``weight`` has shape (c_out, c_in, k, k)."""
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    c_out, c_in, k, k2 = weight.shape
    n, c, h, w = x.shape
    if k != k2:
        raise ShapeError(f"conv2d kernel must be square, got {k}x{k2}")
    if c != c_in:
        raise ShapeError(f"conv2d input has {c} channels but weight expects {c_in}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, k={k}, padding={padding}")

    xp = _pad(x.data, padding)
    cols = _im2col(xp, k, stride, oh, ow)
    wmat = weight.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols).reshape(n, c_out, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    check_finite(out, "conv2d output")
    padded_shape = xp.shape

    def back(g):
        gm = g.reshape(n, c_out, oh * ow)
        dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dx = _col2im(np.matmul(wmat.T, gm), padded_shape, k, stride, oh, ow)
        dx = dx[:, :, padding : padding + h, padding : padding + w]
        db = gm.sum(axis=(0, 2)) if bias is not None else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, back, "conv2d")


def transposed_conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv2d`. ``weight`` has shape (c_in, c_out, k, k)."""
    _require_rank4(x, "transposed_conv2d input")
    _require_rank4(weight, "transposed_conv2d weight")
    c_in, c_out, k, k2 = weight.shape
    n, c, h, w = x.shape
    if k != k2:
        raise ShapeError(f"transposed_conv2d kernel must be square, got {k}x{k2}")
    if c != c_in:
        raise ShapeError(f"transposed_conv2d input has {c} channels but weight expects {c_in}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"transposed_conv2d bias shape {bias.shape} != ({c_out},)")
    full_h = (h - 1) * stride + k
    full_w = (w - 1) * stride + k
    oh, ow = full_h - 2 * padding, full_w - 2 * padding
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed_conv2d output would be empty for input {h}x{w}")

    xm = x.data.reshape(n, c_in, h * w)
    wmat = weight.data.reshape(c_in, -1)
    full = _col2im(np.matmul(wmat.T, xm), (n, c_out, full_h, full_w), k, stride, h, w)
    out = full[:, :, padding : padding + oh, padding : padding + ow]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    check_finite(out, "transposed_conv2d output")

    def back(g):
        gcols = _im2col(_pad(g, padding), k, stride, h, w)
        dx = np.matmul(wmat, gcols).reshape(n, c_in, h, w)
        dw = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, back, "transposed_conv2d")


@dataclass(frozen=True)
class PoolIndices:
    """Argmax positions of a 2x2 max pooling.

    ``local`` holds, for every pooled cell, the row-major offset (0..3) of the
    winning input inside its own 2x2 window, so every index is in-window by
    construction.
    """

    pooled_shape: tuple
    local: np.ndarray

    @property
    def input_shape(self) -> tuple:
        n, c, h, w = self.pooled_shape
        return (n, c, 2 * h, 2 * w)

    def absolute(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column of each argmax in input coordinates."""
        _, _, h, w = self.pooled_shape
        rows = 2 * np.arange(h)[:, None] + self.local // 2
        cols = 2 * np.arange(w)[None, :] + self.local % 2
        return rows, cols


def _windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def _unwindows(x: np.ndarray) -> np.ndarray:
    n, c, h, w, _ = x.shape
    return x.reshape(n, c, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h, 2 * w)


def _scatter(values: np.ndarray, local: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape + (4,), dtype=values.dtype)
    np.put_along_axis(out, local[..., None].astype(np.intp), values[..., None], axis=-1)
    return _unwindows(out)


def max_pool_2x2(x: Tensor) -> tuple[Tensor, PoolIndices]:
    """Non-overlapping 2x2 max pooling; ties go to the first cell in row-major order."""
    _require_rank4(x, "max_pool_2x2 input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool_2x2 needs even spatial dims, got {h}x{w}")
    win = _windows(x.data)
    local = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, local[..., None].astype(np.intp), axis=-1)[..., 0]
    indices = PoolIndices(out.shape, local)

    def back(g):
        return (_scatter(g, local),)

    return make_result(out, (x,), back, "max_pool_2x2"), indices


def max_unpool_2x2(x: Tensor, indices: PoolIndices) -> Tensor:
    """Scatter each value back to its recorded argmax; every other cell is zero."""
    _require_rank4(x, "max_unpool_2x2 input")
    if x.shape != tuple(indices.pooled_shape):
        raise ShapeError(f"max_unpool_2x2 input {x.shape} does not match indices {indices.pooled_shape}")
    local = indices.local
    out = _scatter(x.data, local)

    def back(g):
        return (np.take_along_axis(_windows(g), local[..., None].astype(np.intp), axis=-1)[..., 0],)

    return make_result(out, (x,), back, "max_unpool_2x2")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_rank4(a, "concat_channels operand")
    _require_rank4(b, "concat_channels operand")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels needs equal n, h, w: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def back(g):
        return g[:, :ca], g[:, ca:]

    return make_result(out, (a, b), back, "concat_channels")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return make_result(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    """Dispatch by name: ``relu``, ``leaky_relu``, ``sigmoid`` or ``tanh``."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (n, h, w).

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, as is conventional); in eval mode
    the running buffers are used.
    """
    _require_rank4(x, "batch_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm expects gamma/beta of length {c}, got {gamma.shape}/{beta.shape}")
    axes = (0, 2, 3)
    data = x.data
    if training:
        m = data.size // c
        mean = data.mean(axis=axes)
        var = data.var(axis=axes)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(data.dtype)
        var = running_var.astype(data.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(data.dtype)
    xhat = (data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    g_ = gamma.data[None, :, None, None]
    out = xhat * g_ + beta.data[None, :, None, None]

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            m = data.size // c
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), back, "batch_norm")


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy between ``sigmoid(logits)`` and ``target``.

    ``target`` may be a scalar label or an array broadcastable to the logits.
    Evaluated as ``softplus(z) - z*t`` for stability.
    """
    z = logits.data
    t = np.broadcast_to(np.asarray(target, dtype=z.dtype), z.shape)
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=z.dtype)
    if not np.isfinite(out):
        raise NumericError("non-finite binary cross-entropy")
    count = z.size

    def back(g):
        return (g * (_stable_sigmoid(z) - t) / count,)

    return make_result(out, (logits,), back, "bce_with_logits")
