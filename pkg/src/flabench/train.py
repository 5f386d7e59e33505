"""Early-stopped Adam training with optional input and feature-level augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fla as fla_mod
from .data import Dataset, batch_indices
from .errors import ConfigError, DataError, NumericError
from .layers import softmax_xent
from .model import MiniCNN, ModelSpec
from .optim import AdamState, adam_step
from .tensor import split
from .warp import INPUT_RANGES, AugRanges, augment_images

log = logging.getLogger(__name__)

# order of the named streams derived from TrainConfig.seed
STREAMS = ("init", "input_aug", "fla")


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 5e-4
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    input_aug: AugRanges | None = INPUT_RANGES
    fla: fla_mod.FlaConfig | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")


@dataclass
class History:
    epochs: list = field(default_factory=list)  # one dict per epoch
    fla_events: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def fired_fraction(self, epochs):
        ev = [e for e in self.fla_events if e.epoch in set(epochs)]
        return sum(e.fired for e in ev) / len(ev) if ev else 0.0


def seed_streams(seed):
    return dict(zip(STREAMS, split(seed, len(STREAMS))))


def init_model(spec: ModelSpec, seed) -> MiniCNN:
    return MiniCNN.init(spec, seed_streams(seed)["init"])


def train(model: MiniCNN, dataset: Dataset, config: TrainConfig, on_epoch=None):
    """Train ``model`` in place; returns ``(model, history)``.

    The parameters restored at the end are those of the epoch with the lowest
    validation loss.  Training stops once ``patience`` epochs pass without a
    strict improvement, or after ``max_epochs``.  ``on_epoch(record, events)``
    is called after every epoch.
    """
    for name in ("train", "val"):
        if len(dataset.splits.get(name, ())) == 0:
            raise DataError(f"dataset has an empty {name!r} split")
    streams = seed_streams(config.seed)
    aug_rng, fla_rng = streams["input_aug"], streams["fla"]
    state = AdamState(lr=config.lr)
    history = History()
    input_h = model.spec.input_size[1]
    x_val, y_val = dataset.split("val")

    best_loss, best_params = math.inf, model.copy_params()
    for epoch in range(config.max_epochs):
        tot_loss = tot_correct = seen = fired = 0
        events = []
        for bi, idx in enumerate(batch_indices(dataset, "train", config.batch_size,
                                               shuffle_seed=config.seed, epoch=epoch)):
            x, y = dataset.images[idx], dataset.labels[idx]
            if config.input_aug is not None:
                x = augment_images(x, config.input_aug, aug_rng)
            hook = None
            if config.fla is not None:
                if fla_mod.should_fire(epoch, config.fla, fla_rng):
                    boundary = fla_mod.select_boundary(model.spec.num_boundaries, fla_rng)
                    hook = fla_mod.FlaHook(boundary, config.fla, fla_rng, input_h)
            logits, cache = model.forward(x, hook=hook)
            loss, grad = softmax_xent(logits, y)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads, _ = model.backward(cache, grad)
            adam_step(model.params, grads, state)
            if config.fla is not None:
                events.append(fla_mod.FlaEvent(epoch, bi, hook is not None,
                                               hook.boundary if hook else -1,
                                               hook.params_drawn if hook else 0))
                fired += hook is not None
            tot_loss += loss * len(y)
            tot_correct += int(np.sum(logits.argmax(axis=1) == y))
            seen += len(y)

        val_loss, val_acc = model.loss(x_val, y_val)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        record = {"epoch": epoch, "train_loss": tot_loss / seen, "train_acc": tot_correct / seen,
                  "val_loss": val_loss, "val_acc": val_acc, "fla_fired": fired}
        history.epochs.append(record)
        history.fla_events.extend(events)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f",
                 epoch, record["train_loss"], val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(record, events)

        if val_loss < best_loss:
            best_loss, best_params, history.best_epoch = val_loss, model.copy_params(), epoch
        elif epoch - history.best_epoch >= config.patience:
            history.stopped_early = True
            break

    model.params = best_params
    return model, history


def event_dict(ev: fla_mod.FlaEvent):
    return {"type": "fla_event", **asdict(ev)}
