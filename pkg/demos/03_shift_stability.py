"""
Circular shifts: strided max-pool vs APS
========================================

With circular padding every layer commutes with circular shifts except the
stride-2 subsampling.  Adaptive polyphase sampling picks the polyphase
component with the largest norm, which makes the whole network invariant.
"""

import numpy as np

from flabench.data import SynthSpec, synth_shapes
from flabench.model import ModelSpec
from flabench.tensor import make_rng
from flabench.train import TrainConfig, init_model, train

small = dict(image_size=16, size_lo=2.5, size_hi=6.0, pos_jitter=3.0)
ds = synth_shapes(SynthSpec(samples_per_class=100, seed=1, **small))
x = synth_shapes(SynthSpec(samples_per_class=10, seed=99, **small)).images
x = x + make_rng(5).normal(0, 0.05, x.shape).astype(np.float32)
cfg = TrainConfig(max_epochs=4, lr=2e-3, input_aug=None)

for mode, pad in (("strided_max", "zero"), ("strided_max", "circular"), ("aps", "circular")):
    spec = ModelSpec(num_blocks=3, downsample_mode=mode, pad_mode=pad, input_size=(1, 16, 16))
    model, hist = train(init_model(spec, 0), ds, cfg)
    base = model.predict(x)
    flips = [int(np.sum(model.predict(np.roll(x, s, axis=(2, 3))) != base))
             for s in ((0, 1), (1, 0), (1, 1))]
    print(f"{mode:12s} {pad:9s} val acc {hist.epochs[-1]['val_acc']:.2f}  flips per shift {flips}")
