"""
Feature-level augmentation
==========================

FLA warps every activation map at one randomly chosen block boundary, with
shift bounds that shrink with depth.  It only starts after a warm-up and
fires on about half of the mini-batches.
"""

import numpy as np

from flabench import fla
from flabench.model import MiniCNN, ModelSpec
from flabench.tensor import make_rng
from flabench.warp import FEATURE_RANGES, depth_scaled_ranges

spec = ModelSpec()
model = MiniCNN.init(spec, make_rng(0))
print("boundaries (block -> feature size, max shift):")
for b in range(spec.num_boundaries):
    h, _ = spec.feature_size(b)
    print(f"  {b}: {h}x{h}, +-{depth_scaled_ranges(FEATURE_RANGES, 32, h).max_shift:g} px")

# schedule: nothing during warm-up, then a coin flip per batch
cfg = fla.FlaConfig()
rng = make_rng(1)
for epoch in range(4):
    fired = [fla.should_fire(epoch, cfg, rng) for _ in range(200)]
    print(f"epoch {epoch}: fired on {np.mean(fired):.2f} of batches")

# the hook is linear in the activations, so its backward is the warp adjoint
x = make_rng(2).random((2, 1, 32, 32)).astype(np.float32)
hook = fla.FlaHook(boundary=1, cfg=cfg, rng=make_rng(3), input_h=32)
logits, cache = model.forward(x, hook=hook)
grads, gx = model.backward(cache, np.ones_like(logits) / logits.size)
print("per-map transforms drawn:", hook.params_drawn)
print("input gradient norm:", float(np.linalg.norm(gx)))
