"""Affine warps of activation maps and images.

A warp is described by a 2x3 inverse-warp matrix ``m``: the output pixel at
column ``x``, row ``y`` samples the input at ``m @ (x, y, 1)`` with bilinear
interpolation, reading zero outside the map.  Pixel centres sit on integer
coordinates, and rotation/scaling pivot on the map centre ``((w-1)/2, (h-1)/2)``.

In the forward direction a transform first shifts by ``(dx, dy)`` and then
rotates by ``angle`` degrees and rescales by ``scale`` about the centre.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AffineParams:
    dx: float = 0.0
    dy: float = 0.0
    angle: float = 0.0
    scale: float = 1.0

    @property
    def is_identity(self):
        return self.dx == 0 and self.dy == 0 and self.angle == 0 and self.scale == 1


@dataclass(frozen=True)
class AugRanges:
    """Sampling ranges for one augmentation level.

    Each of translate / rotate / scale is switched on independently with
    probability ``p_op``; switched-on ops draw uniformly from their range.
    """

    max_shift: float = 15.0
    max_angle: float = 15.0
    scale_lo: float = 0.85
    scale_hi: float = 1.15
    p_op: float = 0.5

    def __post_init__(self):
        if self.max_shift < 0 or self.max_angle < 0:
            raise ValueError("max_shift and max_angle must be non-negative")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ValueError(f"need 0 < scale_lo <= scale_hi, got {self.scale_lo}, {self.scale_hi}")
        if not 0 <= self.p_op <= 1:
            raise ValueError(f"p_op must lie in [0, 1], got {self.p_op}")


# Input-image augmentation of the baseline training recipe.
INPUT_RANGES = AugRanges(max_shift=15.0, max_angle=15.0, scale_lo=0.4, scale_hi=1.15, p_op=0.5)
# Feature-map augmentation before depth scaling.
FEATURE_RANGES = AugRanges(max_shift=15.0, max_angle=15.0, scale_lo=0.85, scale_hi=1.15, p_op=0.5)


def sample_param_arrays(ranges: AugRanges, rng: np.random.Generator, size: int):
    """Draw ``size`` transforms at once; returns arrays ``(dx, dy, angle, scale)``."""
    on = rng.random((3, size)) < ranges.p_op
    shift = rng.uniform(-ranges.max_shift, ranges.max_shift, (2, size))
    angle = rng.uniform(-ranges.max_angle, ranges.max_angle, size)
    scale = rng.uniform(ranges.scale_lo, ranges.scale_hi, size)
    dx = np.where(on[0], shift[0], 0.0)
    dy = np.where(on[0], shift[1], 0.0)
    angle = np.where(on[1], angle, 0.0)
    scale = np.where(on[2], scale, 1.0)
    return dx, dy, angle, scale


def sample_params(ranges: AugRanges, rng: np.random.Generator) -> AffineParams:
    dx, dy, angle, scale = sample_param_arrays(ranges, rng, 1)
    return AffineParams(float(dx[0]), float(dy[0]), float(angle[0]), float(scale[0]))


def make_matrices(dx, dy, angle, scale, h: int, w: int) -> np.ndarray:
    """Vectorised :func:`make_matrix`; returns an array of shape ``(..., 2, 3)``."""
    dx, dy, angle, scale = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64)
                                                 for a in (dx, dy, angle, scale)))
    if np.any(scale <= 0):
        raise ValueError("scale must be positive")
    if h < 1 or w < 1:
        raise ValueError("map size must be at least 1x1")
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta) / scale, np.sin(theta) / scale
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    m = np.empty(dx.shape + (2, 3))
    m[..., 0, 0], m[..., 0, 1] = cos, sin
    m[..., 1, 0], m[..., 1, 1] = -sin, cos
    m[..., 0, 2] = cx - cos * cx - sin * cy - dx
    m[..., 1, 2] = cy + sin * cx - cos * cy - dy
    # snap float dust so exact rotations by multiples of 90 degrees stay on-grid
    return np.where(np.abs(m) < 1e-12, 0.0, m)


def make_matrix(params: AffineParams, h: int, w: int) -> np.ndarray:
    return make_matrices(params.dx, params.dy, params.angle, params.scale, h, w)


IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def _groups(x, m):
    """Reshape ``x`` to (groups, maps-per-group, h*w) matching the matrix layout."""
    n, c, h, w = x.shape
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (2, 3):
        return x.reshape(1, n * c, h * w), m[None]
    if m.shape == (n, 2, 3):
        return x.reshape(n, c, h * w), m
    if m.shape == (n, c, 2, 3):
        return x.reshape(n * c, 1, h * w), m.reshape(n * c, 2, 3)
    raise ValueError(f"matrix shape {m.shape} does not fit input {x.shape}")


def _bilinear_taps(m, h, w, dtype):
    """Corner indices and weights, each of shape (groups, 4, h*w)."""
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    sx = m[:, 0, 0, None] * xs + m[:, 0, 1, None] * ys + m[:, 0, 2, None]
    sy = m[:, 1, 0, None] * xs + m[:, 1, 1, None] * ys + m[:, 1, 2, None]
    x0, y0 = np.floor(sx), np.floor(sy)
    fx, fy = sx - x0, sy - y0
    idx, wts = [], []
    for oy, ox, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        cx, cy = x0 + ox, y0 + oy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        idx.append(np.where(ok, cy * w + cx, 0).astype(np.int64))
        wts.append(np.where(ok, wt, 0.0))
    return np.stack(idx, axis=1), np.stack(wts, axis=1).astype(dtype)


def warp(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Bilinear inverse warp of every map of ``x``.

    ``m`` may be a single (2, 3) matrix, one per sample (n, 2, 3) or one per
    activation map (n, c, 2, 3).  Output shape equals input shape.
    """
    m = np.asarray(m, dtype=np.float64)
    if np.array_equal(m, np.broadcast_to(IDENTITY, m.shape)):
        return x.copy()
    n, c, h, w = x.shape
    xg, mg = _groups(x, m)
    idx, wts = _bilinear_taps(mg, h, w, x.dtype)
    out = np.zeros_like(xg)
    for k in range(4):
        out += wts[:, k, None, :] * np.take_along_axis(xg, idx[:, k, None, :], axis=2)
    return out.reshape(n, c, h, w)


def warp_backward(grad_y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`warp` for a fixed matrix (no gradient to ``m``)."""
    m = np.asarray(m, dtype=np.float64)
    if np.array_equal(m, np.broadcast_to(IDENTITY, m.shape)):
        return grad_y.copy()
    n, c, h, w = grad_y.shape
    gg, mg = _groups(grad_y, m)
    groups, per = gg.shape[:2]
    idx, wts = _bilinear_taps(mg, h, w, grad_y.dtype)
    base = (np.arange(groups * per).reshape(groups, per, 1, 1) * (h * w))
    flat_idx = (base + idx[:, None, :, :]).ravel()
    vals = (wts[:, None, :, :] * gg[:, :, None, :]).ravel()
    gx = np.bincount(flat_idx, weights=vals, minlength=groups * per * h * w)
    return gx.astype(grad_y.dtype).reshape(n, c, h, w)


def depth_scaled_ranges(base: AugRanges, input_h: int, feature_h: int) -> AugRanges:
    """Shrink the shift bound with depth, in proportion to spatial resolution.

    The bound is ``base.max_shift * feature_h / input_h`` rounded half-up and
    clamped to ``[1, base.max_shift]``; it is expressed in feature-map pixels.
    Angle and scale ranges are unchanged.
    """
    if not 1 <= feature_h <= input_h:
        raise ValueError(f"need 1 <= feature_h <= input_h, got {feature_h}, {input_h}")
    raw = np.floor(base.max_shift * feature_h / input_h + 0.5)
    shift = float(min(max(raw, min(1.0, base.max_shift)), base.max_shift))
    return replace(base, max_shift=shift)


def augment_images(batch: np.ndarray, cfg: AugRanges, rng: np.random.Generator) -> np.ndarray:
    """Independently warp every sample of ``batch`` with freshly drawn parameters."""
    n, _, h, w = batch.shape
    if n == 0:
        return batch.copy()
    mats = make_matrices(*sample_param_arrays(cfg, rng, n), h, w)
    return warp(batch, mats)
