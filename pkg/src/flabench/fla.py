"""Feature-level augmentation (FLA).

During training, after a warm-up period, each mini-batch is augmented with
probability ``batch_prob``: one block boundary is chosen uniformly and every
activation map leaving that block gets its own random shift / rotation /
rescale.  Shift bounds shrink with depth (see
:func:`flabench.warp.depth_scaled_ranges`).  The warp is linear in the
activations, so the backward pass is the warp adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .warp import FEATURE_RANGES, AugRanges, depth_scaled_ranges, make_matrices, \
    sample_param_arrays, warp, warp_backward


@dataclass(frozen=True)
class FlaConfig:
    warmup_epochs: int = 2
    batch_prob: float = 0.5
    per_op_prob: float = 0.5
    base_ranges: AugRanges = FEATURE_RANGES
    per_channel: bool = True

    def __post_init__(self):
        if not 0 <= self.batch_prob <= 1:
            raise ConfigError(f"batch_prob must lie in [0, 1], got {self.batch_prob}")
        if not 0 <= self.per_op_prob <= 1:
            raise ConfigError(f"per_op_prob must lie in [0, 1], got {self.per_op_prob}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")


@dataclass(frozen=True)
class FlaEvent:
    epoch: int
    batch_index: int
    fired: bool
    boundary: int = -1
    params_drawn: int = 0


def should_fire(epoch: int, cfg: FlaConfig, rng: np.random.Generator) -> bool:
    # no draw while inactive so the stream is untouched
    if epoch < cfg.warmup_epochs or cfg.batch_prob == 0:
        return False
    return bool(rng.random() < cfg.batch_prob)


def select_boundary(num_boundaries: int, rng: np.random.Generator) -> int:
    if num_boundaries < 1:
        raise ConfigError("model has no block boundary to augment")
    return int(rng.integers(num_boundaries))


def draw_matrices(shape, input_h: int, cfg: FlaConfig, rng: np.random.Generator):
    """Inverse-warp matrices for a feature tensor of ``shape``.

    One matrix per (sample, channel) map, or a single shared matrix when
    ``cfg.per_channel`` is off.
    """
    n, c, h, w = shape
    ranges = replace(depth_scaled_ranges(cfg.base_ranges, input_h, h), p_op=cfg.per_op_prob)
    count = n * c if cfg.per_channel else 1
    mats = make_matrices(*sample_param_arrays(ranges, rng, count), h, w)
    return mats.reshape(n, c, 2, 3) if cfg.per_channel else mats[0]


def apply(features, input_h: int, cfg: FlaConfig, rng: np.random.Generator):
    return warp(features, draw_matrices(features.shape, input_h, cfg, rng))


class FlaHook:
    """Model hook that augments the activations at one chosen boundary."""

    def __init__(self, boundary: int, cfg: FlaConfig, rng, input_h: int):
        self.boundary = boundary
        self.cfg = cfg
        self.rng = rng
        self.input_h = input_h
        self.params_drawn = 0

    def __call__(self, k, a):
        if k != self.boundary:
            return a, None
        mats = draw_matrices(a.shape, self.input_h, self.cfg, self.rng)
        self.params_drawn += mats.size // 6
        return warp(a, mats), lambda g: warp_backward(g, mats)
