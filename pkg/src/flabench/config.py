"""Flat ``key=value`` run configuration.

Keys carry a section prefix (``train.lr=0.0005``).  A ``[train]`` header
line prefixes the keys that follow it, so these two files are equivalent::

    train.lr = 0.0005          [train]
    train.seed = 3             lr = 0.0005
                               seed = 3

``#`` starts a comment.  Unknown keys and malformed values raise
:class:`~flabench.errors.ConfigError`.
"""

from __future__ import annotations

import json

from .data import SynthSpec
from .errors import ConfigError
from .fla import FlaConfig
from .model import DOWNSAMPLE_MODES, ModelSpec
from .train import TrainConfig
from .warp import FEATURE_RANGES, INPUT_RANGES, AugRanges

METHODS = ("baseline", "fla", "blurpool", "aps")


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _method(text):
    if text not in METHODS:
        raise ValueError(f"expected one of {', '.join(METHODS)}")
    return text


_synth = SynthSpec()

# key -> (parser, default)
SCHEMA = {
    "train.method": (_method, "baseline"),
    "train.seed": (int, 0),
    "train.batch_size": (int, 16),
    "train.lr": (float, 5e-4),
    "train.max_epochs": (int, 100),
    "train.patience": (int, 10),
    "data.dir": (str, ""),  # IDX directory; empty means generate synth_shapes
    "synth.num_classes": (int, _synth.num_classes),
    "synth.samples_per_class": (int, _synth.samples_per_class),
    "synth.image_size": (int, _synth.image_size),
    "synth.seed": (int, _synth.seed),
    "synth.pos_jitter": (float, _synth.pos_jitter),
    "synth.size_lo": (float, _synth.size_lo),
    "synth.size_hi": (float, _synth.size_hi),
    "synth.intensity_lo": (float, _synth.intensity_lo),
    "synth.intensity_hi": (float, _synth.intensity_hi),
    "synth.noise_std": (float, _synth.noise_std),
    "model.num_blocks": (int, 4),
    "model.convs_per_block": (int, 2),
    "model.base_channels": (int, 16),
    "aug.enabled": (_bool, True),
    "aug.max_shift": (float, INPUT_RANGES.max_shift),
    "aug.max_angle": (float, INPUT_RANGES.max_angle),
    "aug.scale_lo": (float, INPUT_RANGES.scale_lo),
    "aug.scale_hi": (float, INPUT_RANGES.scale_hi),
    "aug.p_op": (float, INPUT_RANGES.p_op),
    "fla.warmup_epochs": (int, 2),
    "fla.batch_prob": (float, 0.5),
    "fla.per_op_prob": (float, 0.5),
    "fla.per_channel": (_bool, True),
    "fla.max_shift": (float, FEATURE_RANGES.max_shift),
    "fla.max_angle": (float, FEATURE_RANGES.max_angle),
    "fla.scale_lo": (float, FEATURE_RANGES.scale_lo),
    "fla.scale_hi": (float, FEATURE_RANGES.scale_hi),
}


def defaults():
    return {k: d for k, (_, d) in SCHEMA.items()}


def parse_lines(text, source="<config>"):
    """Raw ``{key: text}`` pairs from config text, in file order."""
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        out[key] = value
    return out


def coerce(key, value):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parse, _ = SCHEMA[key]
    if not isinstance(value, str):
        value = json.dumps(value) if isinstance(value, bool) else str(value)
    try:
        return parse(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


def resolve(pairs, overrides=()):
    """Defaults updated by ``pairs`` then by ``key=value`` override strings."""
    cfg = defaults()
    for k, v in pairs.items():
        cfg[k] = coerce(k, v)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        cfg[k] = coerce(k, v)
    return cfg


def load(path, overrides=()):
    """Resolve a config file; a training manifest (JSON) is accepted as well."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    if text.lstrip().startswith("{"):
        try:
            pairs = json.loads(text)["config"]
        except (ValueError, KeyError):
            raise ConfigError(f"{path}: not a training manifest") from None
    else:
        pairs = parse_lines(text, str(path))
    return resolve(pairs, overrides)


def dumps(cfg):
    """Config text that :func:`load` resolves back to ``cfg``."""
    return "".join(f"{k} = {json.dumps(v) if isinstance(v, bool) else v}\n" for k, v in sorted(cfg.items()))


def synth_spec(cfg) -> SynthSpec:
    try:
        return SynthSpec(**{k[len("synth."):]: v for k, v in cfg.items() if k.startswith("synth.")})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _ranges(cfg, prefix, p_op):
    try:
        return AugRanges(cfg[prefix + "max_shift"], cfg[prefix + "max_angle"],
                         cfg[prefix + "scale_lo"], cfg[prefix + "scale_hi"], p_op)
    except ValueError as exc:
        raise ConfigError(f"{prefix[:-1]}: {exc}") from None


def model_spec(cfg, num_classes, input_size) -> ModelSpec:
    mode = {"blurpool": "blurpool", "aps": "aps"}.get(cfg["train.method"], DOWNSAMPLE_MODES[0])
    return ModelSpec(num_blocks=cfg["model.num_blocks"], convs_per_block=cfg["model.convs_per_block"],
                     base_channels=cfg["model.base_channels"], downsample_mode=mode,
                     num_classes=num_classes, input_size=tuple(input_size))


def train_config(cfg) -> TrainConfig:
    aug = _ranges(cfg, "aug.", cfg["aug.p_op"]) if cfg["aug.enabled"] else None
    fla = None
    if cfg["train.method"] == "fla":
        fla = FlaConfig(warmup_epochs=cfg["fla.warmup_epochs"], batch_prob=cfg["fla.batch_prob"],
                        per_op_prob=cfg["fla.per_op_prob"],
                        base_ranges=_ranges(cfg, "fla.", cfg["fla.per_op_prob"]),
                        per_channel=cfg["fla.per_channel"])
    return TrainConfig(batch_size=cfg["train.batch_size"], lr=cfg["train.lr"],
                       max_epochs=cfg["train.max_epochs"], patience=cfg["train.patience"],
                       seed=cfg["train.seed"], input_aug=aug, fla=fla)
