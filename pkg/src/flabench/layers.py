"""Hand-written forward/backward kernels for the MiniCNN layers.

All kernels work on (n, c, h, w) arrays and keep the input dtype.  Backward
functions take the upstream gradient first and return gradients with respect
to every differentiable input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError

PAD_MODES = ("zero", "circular")


def _pad(x, pad, mode):
    if pad == 0:
        return x
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    if mode == "zero":
        return np.pad(x, widths)
    if mode == "circular":
        return np.pad(x, widths, mode="wrap")
    raise ValueError(f"unknown pad mode {mode!r}")


def _unpad(gxp, h, w, pad, mode):
    """Adjoint of ``_pad``."""
    if pad == 0:
        return gxp
    if mode == "zero":
        return gxp[:, :, pad:pad + h, pad:pad + w]
    rows = (np.arange(h + 2 * pad) - pad) % h
    cols = (np.arange(w + 2 * pad) - pad) % w
    gx = np.zeros(gxp.shape[:2] + (h, gxp.shape[3]), dtype=gxp.dtype)
    np.add.at(gx, (slice(None), slice(None), rows), gxp)
    out = np.zeros(gxp.shape[:2] + (h, w), dtype=gxp.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), cols), gx)
    return out


def conv_out_size(size, stride, pad, k=3):
    return (size + 2 * pad - k) // stride + 1


def _check_conv(x, w, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and kernel")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if stride not in (1, 2) or pad not in (0, 1):
        raise ValueError(f"unsupported stride={stride} / pad={pad}")


def _im2col(x, k, stride, pad, mode):
    n, c, h, w = x.shape
    oh, ow = conv_out_size(h, stride, pad, k), conv_out_size(w, stride, pad, k)
    win = sliding_window_view(_pad(x, pad, mode), (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # rows ordered (c, ki, kj) to match w.reshape(o, -1); columns (n, oh, ow)
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * oh * ow), oh, ow


def conv2d_forward(x, w, b, stride=1, pad=1, mode="zero"):
    """Cross-correlation with a square kernel; returns ``(y, cols)``.

    ``cols`` is the im2col matrix, handed back to :func:`conv2d_backward` so
    the unfold is done once per step.
    """
    _check_conv(x, w, stride, pad)
    n = x.shape[0]
    o, _, k, _ = w.shape
    cols, oh, ow = _im2col(x, k, stride, pad, mode)
    y = (w.reshape(o, -1) @ cols).reshape(o, n, oh, ow).transpose(1, 0, 2, 3)
    y = y + b.reshape(1, o, 1, 1)
    return np.ascontiguousarray(y, dtype=x.dtype), cols


def conv2d(x, w, b, stride=1, pad=1, mode="zero"):
    return conv2d_forward(x, w, b, stride, pad, mode)[0]


def conv2d_backward(grad_y, x, w, stride=1, pad=1, mode="zero", cols=None):
    """Gradients ``(grad_x, grad_w, grad_b)`` of :func:`conv2d`."""
    _check_conv(x, w, stride, pad)
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    oh, ow = conv_out_size(h, stride, pad, k), conv_out_size(wd, stride, pad, k)
    if grad_y.shape != (n, o, oh, ow):
        raise ShapeError(f"grad_y shape {grad_y.shape} != {(n, o, oh, ow)}")
    if cols is None:
        cols, _, _ = _im2col(x, k, stride, pad, mode)

    gy = grad_y.transpose(1, 0, 2, 3).reshape(o, -1)
    grad_b = grad_y.sum(axis=(0, 2, 3))
    grad_w = (gy @ cols.T).reshape(w.shape)

    gcols = (w.reshape(o, -1).T @ gy).reshape(c, k, k, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
    grad_x = _unpad(gxp, h, wd, pad, mode)
    return grad_x.astype(x.dtype, copy=False), grad_w.astype(w.dtype, copy=False), grad_b


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_y, x):
    return grad_y * (x > 0)


def _pad_even(x, fill):
    h, w = x.shape[2:]
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=fill)
    return x


def maxpool2(x):
    """2x2 max-pool, stride 2, ceil mode. Returns ``(y, argmax)``."""
    n, c = x.shape[:2]
    xe = _pad_even(x, -np.inf)
    h2, w2 = xe.shape[2] // 2, xe.shape[3] // 2
    win = xe.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(grad_y, idx, in_shape):
    n, c, h, w = in_shape
    h2, w2 = grad_y.shape[2:]
    g = np.zeros((n, c, h2, w2, 4), dtype=grad_y.dtype)
    np.put_along_axis(g, idx[..., None], grad_y[..., None], axis=-1)
    g = g.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    return g[:, :, :h, :w]


_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def dense_max(x, mode="zero"):
    """Stride-1 2x2 max over ``x[i:i+2, j:j+2]``; output keeps the input size.

    Windows that run past the bottom/right edge are clipped (``mode="zero"``)
    or wrap around (``mode="circular"``).  Returns ``(y, argmax)``.
    """
    if mode == "circular":
        xp = np.pad(x, ((0, 0), (0, 0), (0, 1), (0, 1)), mode="wrap")
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (0, 1), (0, 1)), constant_values=-np.inf)
    h, w = x.shape[2:]
    stack = np.stack([xp[:, :, di:di + h, dj:dj + w] for di, dj in _OFFSETS], axis=-1)
    idx = stack.argmax(axis=-1)
    y = np.take_along_axis(stack, idx[..., None], axis=-1)[..., 0]
    return y, idx


def dense_max_backward(grad_y, idx, mode="zero"):
    n, c, h, w = grad_y.shape
    gp = np.zeros((n, c, h + 1, w + 1), dtype=grad_y.dtype)
    for k, (di, dj) in enumerate(_OFFSETS):
        gp[:, :, di:di + h, dj:dj + w] += np.where(idx == k, grad_y, 0)
    g = gp[:, :, :h, :w].copy()
    if mode == "circular":
        g[:, :, 0, :] += gp[:, :, h, :w]
        g[:, :, :, 0] += gp[:, :, :h, w]
        g[:, :, 0, 0] += gp[:, :, h, w]
    return g


def global_avg_pool(x):
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("global_avg_pool needs h, w >= 1")
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad_y, in_shape):
    h, w = in_shape[2:]
    return np.broadcast_to(grad_y / (h * w), in_shape).copy()


def dense(x, W, b):
    """Affine head: ``x`` is (n, c, 1, 1) or (n, c); ``W`` is (classes, c)."""
    xf = x.reshape(x.shape[0], -1)
    if xf.shape[1] != W.shape[1]:
        raise ShapeError(f"dense input has {xf.shape[1]} features, weight expects {W.shape[1]}")
    return xf @ W.T + b


def dense_backward(grad_y, x, W):
    xf = x.reshape(x.shape[0], -1)
    grad_x = (grad_y @ W).reshape(x.shape)
    return grad_x, grad_y.T @ xf, grad_y.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logz - z[rows, labels]))
    grad = np.exp(z - logz[:, None])
    grad[rows, labels] -= 1
    return loss, (grad / n).astype(logits.dtype, copy=False)
