"""Anti-aliased (BlurPool) and adaptive polyphase (APS) downsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers


@dataclass(frozen=True)
class BlurKernel:
    size: int
    weights: np.ndarray  # (size, size), sums to 1


@dataclass(frozen=True)
class ApsChoice:
    component_index: np.ndarray  # per sample (or per sample/channel), values in 0..3
    norm_value: np.ndarray


def triangle_1d(n: int) -> np.ndarray:
    if n < 1 or n % 2 == 0:
        raise ValueError(f"triangle filter size must be odd and positive, got {n}")
    half = (n + 1) // 2
    t = np.concatenate([np.arange(1, half + 1), np.arange(half - 1, 0, -1)]).astype(np.float64)
    return t / t.sum()


def triangle_kernel(n: int = 3) -> BlurKernel:
    t = triangle_1d(n)
    return BlurKernel(n, np.outer(t, t))


def blur(x, k: BlurKernel, mode="zero"):
    """Depthwise 2-D filtering with ``k``, same-size output."""
    p = (k.size - 1) // 2
    n, c, h, w = x.shape
    xp = layers._pad(x, p, mode)
    out = np.zeros_like(x)
    wts = k.weights.astype(x.dtype)
    for i in range(k.size):
        for j in range(k.size):
            out += wts[i, j] * xp[:, :, i:i + h, j:j + w]
    return out


def blur_backward(grad_y, k: BlurKernel, mode="zero"):
    p = (k.size - 1) // 2
    n, c, h, w = grad_y.shape
    gp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad_y.dtype)
    wts = k.weights.astype(grad_y.dtype)
    for i in range(k.size):
        for j in range(k.size):
            gp[:, :, i:i + h, j:j + w] += wts[i, j] * grad_y
    return layers._unpad(gp, h, w, p, mode)


def blurpool(x, k: BlurKernel | None = None, max_first=True, mode="zero"):
    """Blur with ``k`` and keep even rows/columns.

    With ``max_first`` a stride-1 2x2 max runs before the blur (MaxBlurPool),
    which is how a stride-2 max-pool is replaced.  Returns ``(y, cache)``.
    """
    k = k or triangle_kernel(3)
    cache = {"shape": x.shape, "k": k, "mode": mode, "idx": None}
    if max_first:
        x, cache["idx"] = layers.dense_max(x, mode)
    return blur(x, k, mode)[:, :, ::2, ::2], cache


def blurpool_backward(grad_y, cache):
    n, c, h, w = cache["shape"]
    g = np.zeros((n, c, h, w), dtype=grad_y.dtype)
    g[:, :, ::2, ::2] = grad_y
    g = blur_backward(g, cache["k"], cache["mode"])
    if cache["idx"] is not None:
        g = layers.dense_max_backward(g, cache["idx"], cache["mode"])
    return g


OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def polyphase_components(x, stride=2):
    """The four stride-2 sub-grids at offsets (0,0), (0,1), (1,0), (1,1)."""
    if stride != 2:
        raise ValueError("only stride 2 is supported")
    return [x[:, :, i::2, j::2] for i, j in OFFSETS]


def aps(x, per_channel=False):
    """Keep the polyphase component with the largest L2 norm.

    The norm is taken jointly over channels per sample (or per sample and
    channel with ``per_channel``); ties go to the lowest component index.
    Odd sizes are zero-padded at the bottom/right first, which leaves the
    norms unchanged.  Returns ``(y, choice)``.
    """
    xe = layers._pad_even(x, 0)
    comps = np.stack(polyphase_components(xe), axis=2)  # n, c, 4, h2, w2
    sq = np.square(comps, dtype=np.float64).sum(axis=(3, 4))  # n, c, 4
    if not per_channel:
        sq = sq.sum(axis=1, keepdims=True)
    # argmax returns the first maximum, i.e. the lowest index on ties
    idx = sq.argmax(axis=2)
    norms = np.sqrt(np.take_along_axis(sq, idx[..., None], axis=2)[..., 0])
    sel = np.broadcast_to(idx[:, :, None, None, None], comps.shape[:2] + (1,) + comps.shape[3:])
    y = np.take_along_axis(comps, sel, axis=2)[:, :, 0]
    if not per_channel:
        idx, norms = idx[:, 0], norms[:, 0]
    return np.ascontiguousarray(y), ApsChoice(idx, norms)


def aps_backward(grad_y, choice: ApsChoice, in_shape):
    """Route gradients back to the positions of the selected component only."""
    n, c, h, w = in_shape
    he, we = h + h % 2, w + w % 2
    idx = choice.component_index
    if idx.ndim == 1:
        idx = np.broadcast_to(idx[:, None], (n, c))
    g = np.zeros((n, c, he, we), dtype=grad_y.dtype)
    for k, (i, j) in enumerate(OFFSETS):
        g[:, :, i::2, j::2] += np.where((idx == k)[:, :, None, None], grad_y, 0)
    return g[:, :, :h, :w]


def aps_pool(x, max_first=True, mode="zero", per_channel=False):
    """APS as a max-pool replacement: optional stride-1 max, then APS."""
    cache = {"shape": x.shape, "mode": mode, "idx": None}
    if max_first:
        x, cache["idx"] = layers.dense_max(x, mode)
    y, cache["choice"] = aps(x, per_channel)
    return y, cache


def aps_pool_backward(grad_y, cache):
    g = aps_backward(grad_y, cache["choice"], cache["shape"])
    if cache["idx"] is not None:
        g = layers.dense_max_backward(g, cache["idx"], cache["mode"])
    return g
