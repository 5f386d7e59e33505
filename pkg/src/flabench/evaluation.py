"""Affine-stability evaluation: perturbation sweeps, flip rates and reports.

A model is anything with ``predict(images) -> labels``.  Each test image is
swept along a sorted grid of perturbation magnitudes; the flip rate counts
label changes between neighbouring magnitudes.  Translation is swept along
x and y separately and the two mean flip rates are averaged.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .warp import AffineParams, make_matrix, warp

OPS = ("rotate", "translate_x", "translate_y", "scale")
IDENTITY_VALUE = {"rotate": 0.0, "translate_x": 0.0, "translate_y": 0.0, "scale": 1.0}
CSV_COLUMNS = ("model", "seed", "accuracy", "mfr_translate", "mfr_rotate", "mfr_scale", "trade_off")


@dataclass(frozen=True)
class SweepGrid:
    op: str
    values: tuple

    @property
    def identity_index(self):
        return self.values.index(IDENTITY_VALUE[self.op])


def make_grid(op: str) -> SweepGrid:
    if op == "rotate":
        vals = np.arange(-15, 16, dtype=np.float64)
    elif op in ("translate_x", "translate_y"):
        vals = np.arange(-20, 21, dtype=np.float64)
    elif op == "scale":
        # integer steps keep 1.0 exact on the grid
        vals = np.round(0.4 + 0.025 * np.arange(31), 10)
    else:
        raise ValueError(f"unknown op {op!r}")
    return SweepGrid(op, tuple(float(v) for v in vals))


def op_params(op: str, value: float) -> AffineParams:
    if op == "rotate":
        return AffineParams(angle=value)
    if op == "translate_x":
        return AffineParams(dx=value)
    if op == "translate_y":
        return AffineParams(dy=value)
    if op == "scale":
        return AffineParams(scale=value)
    raise ValueError(f"unknown op {op!r}")


def perturb(images, op: str, value: float):
    """Apply one perturbation to every image; the identity value is a bitwise copy."""
    h, w = images.shape[2:]
    return warp(images, make_matrix(op_params(op, value), h, w))


def flip_rate(labels) -> float:
    labels = np.asarray(labels)
    if len(labels) < 2:
        raise ValueError("flip_rate needs at least two labels")
    return float(np.mean(labels[1:] != labels[:-1]))


def label_table(model, images, op: str):
    """Predicted labels, shape (num_images, num_grid_values)."""
    grid = make_grid(op)
    return np.stack([np.asarray(model.predict(perturb(images, op, v))) for v in grid.values], axis=1)


def _flip_rates(table):
    return np.mean(table[:, 1:] != table[:, :-1], axis=1)


def _histogram(table, grid: SweepGrid):
    ref = table[:, grid.identity_index]
    return [int(c) for c in np.sum(table != ref[:, None], axis=0)]


def _split_images(dataset, split):
    x, y = dataset.split(split)
    if len(x) == 0:
        raise DataError(f"split {split!r} is empty")
    return x, y


def mfr(model, dataset, op: str, split="test") -> float:
    """Mean flip rate in percent; ``op="translate"`` averages the x and y sweeps."""
    x, _ = _split_images(dataset, split)
    if op == "translate":
        return (mfr(model, dataset, "translate_x", split) + mfr(model, dataset, "translate_y", split)) / 2
    return 100.0 * float(np.mean(_flip_rates(label_table(model, x, op))))


def flip_histogram(model, dataset, op: str, split="test"):
    """``[(value, count)]``: images whose label at ``value`` differs from the unperturbed one."""
    x, _ = _split_images(dataset, split)
    grid = make_grid(op)
    return list(zip(grid.values, _histogram(label_table(model, x, op), grid)))


def trade_off(accuracy: float, mfrs) -> float:
    """Accuracy minus the mean of the (translate, rotate, scale) flip rates."""
    mfr_t, mfr_r, mfr_s = mfrs
    return accuracy - (mfr_t + mfr_r + mfr_s) / 3


@dataclass
class StabilityReport:
    model: str
    seed: int | None
    accuracy: float
    mfr_translate: float
    mfr_rotate: float
    mfr_scale: float
    trade_off: float
    histograms: dict = field(default_factory=dict)  # op -> [[value, count], ...]

    def to_dict(self):
        return {
            "model": self.model,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "mfr": {"translate": self.mfr_translate, "rotate": self.mfr_rotate, "scale": self.mfr_scale},
            "trade_off": self.trade_off,
            "histograms": {op: [[v, c] for v, c in h] for op, h in self.histograms.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["model"], d["seed"], d["accuracy"], d["mfr"]["translate"], d["mfr"]["rotate"],
                   d["mfr"]["scale"], d["trade_off"],
                   {op: [[float(v), int(c)] for v, c in h] for op, h in d["histograms"].items()})

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))

    def row(self):
        return [self.model, self.seed, self.accuracy, self.mfr_translate, self.mfr_rotate,
                self.mfr_scale, self.trade_off]


def evaluate(model, dataset, split="test", model_id="model", seed=None) -> StabilityReport:
    """Accuracy on the clean split plus every flip-rate sweep and histogram."""
    x, y = _split_images(dataset, split)
    accuracy = 100.0 * float(np.mean(np.asarray(model.predict(x)) == y))
    rates, hists = {}, {}
    for op in OPS:
        table = label_table(model, x, op)
        rates[op] = 100.0 * float(np.mean(_flip_rates(table)))
        grid = make_grid(op)
        hists[op] = [[v, c] for v, c in zip(grid.values, _histogram(table, grid))]
    mfr_t = (rates["translate_x"] + rates["translate_y"]) / 2
    t = trade_off(accuracy, (mfr_t, rates["rotate"], rates["scale"]))
    return StabilityReport(model_id, seed, accuracy, mfr_t, rates["rotate"], rates["scale"], t, hists)


def _fmt(v):
    return "" if v is None else (repr(v) if isinstance(v, float) else str(v))


def reports_csv(reports) -> str:
    """One row per report in the accuracy / mFR / trade-off column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


METRICS = ("accuracy", "mfr_translate", "mfr_rotate", "mfr_scale", "trade_off")
HIGHER_IS_BETTER = {"accuracy": True, "mfr_translate": False, "mfr_rotate": False,
                    "mfr_scale": False, "trade_off": True}


def aggregate(reports):
    """Mean and sample standard deviation (n-1) of every metric."""
    out = {}
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in reports], dtype=np.float64)
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out[m] = (float(np.mean(vals)), std)
    return out


def aggregate_csv(reports) -> str:
    agg = aggregate(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "runs"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")])
    w.writerow([reports[0].model, len(reports)] + [f"{agg[m][i]:.4f}" for m in METRICS for i in (0, 1)])
    return buf.getvalue()


def comparison_table(reports):
    """Group reports by model: ``[(model, runs, {metric: (mean, std)}, best_metrics)]``."""
    groups = {}
    for r in reports:
        groups.setdefault(r.model, []).append(r)
    rows = [(name, len(rs), aggregate(rs)) for name, rs in groups.items()]
    best = {}
    for m in METRICS:
        key = (lambda row: row[2][m][0]) if HIGHER_IS_BETTER[m] else (lambda row: -row[2][m][0])
        best[m] = max(key(row) for row in rows)
    out = []
    for name, n, agg in rows:
        score = {m: agg[m][0] if HIGHER_IS_BETTER[m] else -agg[m][0] for m in METRICS}
        out.append((name, n, agg, [m for m in METRICS if score[m] == best[m]]))
    return out


def comparison_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "runs"] + [f"{m}{s}" for m in METRICS for s in ("", "_std")] + ["best"])
    for name, n, agg, best in comparison_table(reports):
        w.writerow([name, n] + [f"{agg[m][i]:.2f}" for m in METRICS for i in (0, 1)] + [";".join(best)])
    return buf.getvalue()


def histogram_csv(reports, op: str) -> str:
    """``magnitude, count_<model>...``; counts are averaged over a model's runs."""
    groups = {}
    for r in reports:
        groups.setdefault(r.model, []).append(r)
    values = [v for v, _ in next(iter(groups.values()))[0].histograms[op]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["magnitude"] + [f"count_{name}" for name in groups])
    for i, v in enumerate(values):
        row = [f"{v:g}"]
        for rs in groups.values():
            row.append(f"{np.mean([r.histograms[op][i][1] for r in rs]):g}")
        w.writerow(row)
    return buf.getvalue()
