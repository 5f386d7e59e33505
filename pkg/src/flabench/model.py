"""MiniCNN: a block-structured convolutional classifier with manual backprop.

Each block is ``convs_per_block`` 3x3 conv + ReLU layers.  Consecutive blocks
are separated by a stride-2 downsampling step (max-pool, MaxBlurPool or
APS); the head is global average pooling followed by a dense layer.  The
points between blocks, just before downsampling, are where feature-level
augmentation can be inserted.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers, stabilizers
from .errors import ConfigError, FormatError
from .tensor import DTYPE, read_tensor, write_tensor

DOWNSAMPLE_MODES = ("strided_max", "blurpool", "aps")
CKPT_MAGIC = b"MCNN"


@dataclass(frozen=True)
class ModelSpec:
    num_blocks: int = 4
    convs_per_block: int = 2
    base_channels: int = 16
    downsample_mode: str = "strided_max"
    num_classes: int = 10
    input_size: tuple = (1, 32, 32)
    pad_mode: str = "zero"  # "circular" makes every layer commute with circular shifts

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if self.num_blocks < 2:
            raise ConfigError("num_blocks must be at least 2")
        if self.convs_per_block < 1 or self.base_channels < 1:
            raise ConfigError("convs_per_block and base_channels must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.downsample_mode not in DOWNSAMPLE_MODES:
            raise ConfigError(f"unknown downsample mode {self.downsample_mode!r}")
        if self.pad_mode not in layers.PAD_MODES:
            raise ConfigError(f"unknown pad mode {self.pad_mode!r}")
        h, w = self.input_size[1:]
        if min(h, w) < 2 ** (self.num_blocks - 1):
            raise ConfigError(f"input {h}x{w} too small for {self.num_blocks - 1} downsamplings")

    def channels(self, block):
        return self.base_channels * 2 ** block

    def feature_size(self, block):
        """Spatial (h, w) of the activations produced by ``block``."""
        h, w = self.input_size[1:]
        for _ in range(block):
            h, w = (h + 1) // 2, (w + 1) // 2
        return h, w

    @property
    def num_boundaries(self):
        return self.num_blocks - 1


def downsample(x, mode, mode_pad="zero"):
    """Stride-2 downsampling dispatch.  Returns ``(y, cache)``."""
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ValueError("downsampling needs h, w >= 2")
    if mode == "strided_max":
        y, idx = layers.maxpool2(x)
        return y, ("strided_max", idx, x.shape)
    if mode == "blurpool":
        y, cache = stabilizers.blurpool(x, max_first=True, mode=mode_pad)
        return y, ("blurpool", cache)
    if mode == "aps":
        y, cache = stabilizers.aps_pool(x, max_first=True, mode=mode_pad)
        return y, ("aps", cache)
    raise ConfigError(f"unknown downsample mode {mode!r}")


def downsample_backward(grad_y, cache):
    if cache[0] == "strided_max":
        return layers.maxpool2_backward(grad_y, cache[1], cache[2])
    if cache[0] == "blurpool":
        return stabilizers.blurpool_backward(grad_y, cache[1])
    return stabilizers.aps_pool_backward(grad_y, cache[1])


@dataclass
class MiniCNN:
    spec: ModelSpec
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec: ModelSpec, rng: np.random.Generator, dtype=DTYPE):
        """He-normal conv and dense weights, zero biases."""
        params = {}
        cin = spec.input_size[0]
        for b in range(spec.num_blocks):
            cout = spec.channels(b)
            for l in range(spec.convs_per_block):
                std = np.sqrt(2.0 / (cin * 9))
                params[f"conv{b}_{l}.w"] = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(dtype)
                params[f"conv{b}_{l}.b"] = np.zeros(cout, dtype=dtype)
                cin = cout
        params["fc.w"] = (rng.standard_normal((spec.num_classes, cin)) * np.sqrt(1.0 / cin)).astype(dtype)
        params["fc.b"] = np.zeros(spec.num_classes, dtype=dtype)
        return cls(spec, params)

    @property
    def block_boundaries(self):
        """Conv-layer indices after which a block ends and downsampling starts."""
        L = self.spec.convs_per_block
        return [(b + 1) * L - 1 for b in range(self.spec.num_blocks - 1)]

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def forward(self, x, hook=None, train=True):
        """Run the network; returns ``(logits, cache)``.

        ``hook(boundary, activations)`` is called at every block boundary and
        must return ``(activations, backward_fn_or_None)``.
        """
        s, p = self.spec, self.params
        cache = {"convs": [], "hooks": [], "down": []}
        a = x
        for b in range(s.num_blocks):
            for l in range(s.convs_per_block):
                z, cols = layers.conv2d_forward(a, p[f"conv{b}_{l}.w"], p[f"conv{b}_{l}.b"], mode=s.pad_mode)
                if train:
                    cache["convs"].append((a, cols, z))
                a = layers.relu(z)
            if b < s.num_blocks - 1:
                back = None
                if hook is not None:
                    a, back = hook(b, a)
                cache["hooks"].append(back)
                a, dc = downsample(a, s.downsample_mode, s.pad_mode)
                cache["down"].append(dc)
        cache["pre_pool"] = a.shape
        g = layers.global_avg_pool(a)
        cache["pooled"] = g
        return layers.dense(g, p["fc.w"], p["fc.b"]), cache

    def backward(self, cache, grad_logits):
        s, p = self.spec, self.params
        grads = {}
        gg, grads["fc.w"], grads["fc.b"] = layers.dense_backward(grad_logits, cache["pooled"], p["fc.w"])
        ga = layers.global_avg_pool_backward(gg, cache["pre_pool"])
        convs = cache["convs"]
        for b in reversed(range(s.num_blocks)):
            if b < s.num_blocks - 1:
                ga = downsample_backward(ga, cache["down"][b])
                if cache["hooks"][b] is not None:
                    ga = cache["hooks"][b](ga)
            for l in reversed(range(s.convs_per_block)):
                a_in, cols, z = convs[b * s.convs_per_block + l]
                gz = layers.relu_backward(ga, z)
                ga, gw, gb = layers.conv2d_backward(gz, a_in, p[f"conv{b}_{l}.w"], mode=s.pad_mode, cols=cols)
                grads[f"conv{b}_{l}.w"], grads[f"conv{b}_{l}.b"] = gw, gb
        return {k: grads[k] for k in p}, ga

    def logits(self, x, batch_size=128):
        out = [self.forward(x[i:i + batch_size], train=False)[0] for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.spec.num_classes), dtype=x.dtype)
        return np.concatenate(out)

    def predict(self, x, batch_size=128):
        return self.logits(x, batch_size).argmax(axis=1)

    def loss(self, x, labels, batch_size=128):
        """Mean cross-entropy and accuracy (fraction) over ``x``."""
        z = self.logits(x, batch_size)
        loss, _ = layers.softmax_xent(z, labels)
        return loss, float(np.mean(z.argmax(axis=1) == labels))

    # checkpoint format: b"MCNN", u32 LE byte length of the JSON spec, the
    # JSON spec, then each parameter as a T4F1 tensor in declaration order
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        meta = json.dumps(asdict(self.spec), sort_keys=True).encode()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<I", len(meta)))
        buf.write(meta)
        for v in self.params.values():
            write_tensor(buf, v)
        return buf.getvalue()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes):
        buf = io.BytesIO(data)
        if buf.read(4) != CKPT_MAGIC:
            raise FormatError("bad checkpoint magic at byte 0")
        raw = buf.read(4)
        if len(raw) != 4:
            raise FormatError("truncated checkpoint header at byte 4")
        (n,) = struct.unpack("<I", raw)
        try:
            spec = ModelSpec(**json.loads(buf.read(n)))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad model spec at byte 8: {exc}") from exc
        template = cls.init(spec, np.random.default_rng(0))
        params = {}
        for k, v in template.params.items():
            t = read_tensor(buf)
            if t.size != v.size:
                raise FormatError(f"parameter {k} has {t.size} values, expected {v.size}")
            params[k] = t.reshape(v.shape)
        return cls(spec, params)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
