"""
Training and stability evaluation at small scale
================================================

Trains baseline, FLA and BlurPool models on a reduced synthetic dataset and
prints their accuracy, mean flip rates and trade-off.  Takes a few minutes
on one core.
"""

import logging

from flabench.data import SynthSpec, synth_shapes
from flabench.evaluation import comparison_csv
from flabench.experiment import run_method
from flabench.model import ModelSpec
from flabench.train import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("flabench.train").setLevel(logging.WARNING)

ds = synth_shapes(SynthSpec(samples_per_class=60, image_size=32, seed=0))
spec = ModelSpec(base_channels=8)
config = TrainConfig(max_epochs=6)

reports = []
for method in ("baseline", "fla", "blurpool"):
    _, history, report = run_method(method, 0, ds, spec, config)
    reports.append(report)

print(comparison_csv(reports))
