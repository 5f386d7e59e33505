"""Datasets: IDX files, a synthetic shapes generator, splits and batching."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError
from .tensor import DTYPE, make_rng

SPLITS = ("train", "val", "test")
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
IMAGES_FILE = "images-idx3-ubyte"
LABELS_FILE = "labels-idx1-ubyte"
SPLITS_FILE = "splits.json"


@dataclass
class Dataset:
    images: np.ndarray  # (N, c, h, w) in [0, 1]
    labels: np.ndarray  # (N,) int64
    splits: dict = field(default_factory=dict)  # name -> sorted index array

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def split(self, name):
        if name not in self.splits:
            raise ValueError(f"unknown split {name!r}; have {sorted(self.splits)}")
        idx = self.splits[name]
        return self.images[idx], self.labels[idx]


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: file too short for IDX magic (byte 0)")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x} at byte 0, expected 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(data) < head:
        raise FormatError(f"{path}: truncated dimension header at byte {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    count = int(np.prod(dims))
    if len(data) - head < count:
        raise FormatError(f"{path}: truncated payload, {len(data) - head} of {count} bytes after byte {head}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, splits=None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1].

    Without ``splits`` every sample is placed in the test split.
    """
    images = _read_idx(images_path, IDX_IMAGES, 3)
    labels = _read_idx(labels_path, IDX_LABELS, 1)
    if len(images) != len(labels):
        raise FormatError(f"{images_path} holds {len(images)} images but "
                          f"{labels_path} holds {len(labels)} labels (count at byte 4)")
    x = (images.astype(DTYPE) / 255.0)[:, None]
    if splits is None:
        splits = {"test": np.arange(len(labels))}
    return Dataset(x, labels.astype(np.int64), splits)


def save_idx(dataset: Dataset, images_path, labels_path):
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise DataError("IDX export supports single-channel images only")
    pix = np.clip(np.rint(dataset.images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES, n, h, w))
        fh.write(pix.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def save_dir(dataset: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_idx(dataset, os.path.join(out_dir, IMAGES_FILE), os.path.join(out_dir, LABELS_FILE))
    with open(os.path.join(out_dir, SPLITS_FILE), "w") as fh:
        json.dump({k: v.tolist() for k, v in dataset.splits.items()}, fh)


def load_dir(path) -> Dataset:
    """Load a directory written by :func:`save_dir` (splits file optional)."""
    splits = None
    spath = os.path.join(path, SPLITS_FILE)
    if os.path.exists(spath):
        with open(spath) as fh:
            splits = json.load(fh)
    return load_idx(os.path.join(path, IMAGES_FILE), os.path.join(path, LABELS_FILE), splits)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    samples_per_class: int = 500
    image_size: int = 32
    seed: int = 0
    pos_jitter: float = 6.0  # max centre offset in pixels
    size_lo: float = 3.5  # shape radius range in pixels
    size_hi: float = 9.0
    intensity_lo: float = 0.25
    intensity_hi: float = 1.0
    noise_std: float = 0.05

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if not 2 <= self.num_classes <= len(SHAPES):
            raise ValueError(f"num_classes must lie in [2, {len(SHAPES)}]")


def _soft(d):
    """Coverage of a pixel at signed distance ``d`` (negative inside)."""
    return np.clip(0.5 - d, 0.0, 1.0)


def _disk(u, v, r):
    return _soft(np.hypot(u, v) - r)


def _ring(u, v, r):
    return _soft(np.abs(np.hypot(u, v) - 0.75 * r) - 0.2 * r - 0.5)


def _square(u, v, r):
    return _soft(np.maximum(np.abs(u), np.abs(v)) - 0.8 * r)


def _triangle(u, v, r):
    # upward equilateral triangle centred on the origin
    d = np.maximum.reduce([v - 0.5 * r,
                           -0.866 * u - 0.5 * v - 0.5 * r,
                           0.866 * u - 0.5 * v - 0.5 * r])
    return _soft(d)


def _cross(u, v, r):
    t = 0.25 * r
    arm = np.minimum(np.maximum(np.abs(u) - r, np.abs(v) - t),
                     np.maximum(np.abs(v) - r, np.abs(u) - t))
    return _soft(arm)


def _hbar(u, v, r):
    return _soft(np.maximum(np.abs(u) - 1.2 * r, np.abs(v) - 0.3 * r))


def _vbar(u, v, r):
    return _hbar(v, u, r)


def _diagonal(u, v, r):
    return _soft(np.maximum(np.abs(u - v) / np.sqrt(2) - 0.3 * r, np.abs(u + v) / np.sqrt(2) - 1.2 * r))


def _checker(u, v, r):
    inside = np.maximum(np.abs(u), np.abs(v)) - r
    cell = np.maximum(r / 2.0, 1.0)
    parity = (np.floor((u + r) / cell) + np.floor((v + r) / cell)) % 2
    return _soft(inside) * parity


def _dot_grid(u, v, r):
    out = np.zeros_like(u)
    for cy in (-0.7 * r, 0.0, 0.7 * r):
        for cx in (-0.7 * r, 0.0, 0.7 * r):
            out = np.maximum(out, _disk(u - cx, v - cy, 0.18 * r + 0.5))
    return out


SHAPES = (("disk", _disk), ("ring", _ring), ("square", _square), ("triangle", _triangle),
          ("cross", _cross), ("hbar", _hbar), ("vbar", _vbar), ("diagonal", _diagonal),
          ("checker", _checker), ("dot_grid", _dot_grid))


def stratified_split(labels, rng, fractions=(0.7, 0.15)):
    """Per-class shuffle, then the first 70% train, next 15% val, rest test."""
    out = {k: [] for k in SPLITS}
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        out["train"].append(idx[:n_tr])
        out["val"].append(idx[n_tr:n_tr + n_va])
        out["test"].append(idx[n_tr + n_va:])
    return {k: np.sort(np.concatenate(v)) for k, v in out.items()}


def synth_shapes(spec: SynthSpec) -> Dataset:
    """Render jittered, noisy single-channel shape images, deterministically."""
    rng = make_rng(spec.seed)
    s = spec.image_size
    n = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    centre = (s - 1) / 2.0
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    images = np.empty((n, 1, s, s), dtype=DTYPE)
    for i, c in enumerate(labels):
        ox, oy = rng.uniform(-spec.pos_jitter, spec.pos_jitter, 2)
        r = rng.uniform(spec.size_lo, spec.size_hi)
        level = rng.uniform(spec.intensity_lo, spec.intensity_hi)
        img = level * SHAPES[c][1](xs - centre - ox, ys - centre - oy, r)
        img = img + rng.normal(0.0, spec.noise_std, img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, stratified_split(labels, rng))


def batch_indices(dataset: Dataset, split, batch_size, shuffle_seed=None, epoch=0):
    """Index arrays for each mini-batch; the last one may be partial."""
    if split not in dataset.splits:
        raise ValueError(f"unknown split {split!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    idx = dataset.splits[split]
    if shuffle_seed is not None:
        idx = idx[make_rng([int(shuffle_seed), int(epoch)]).permutation(len(idx))]
    return [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]


def batches(dataset: Dataset, split, batch_size, shuffle_seed=None, epoch=0):
    """Yield ``(images, labels)`` mini-batches in a seeded order."""
    for idx in batch_indices(dataset, split, batch_size, shuffle_seed, epoch):
        yield dataset.images[idx], dataset.labels[idx]
