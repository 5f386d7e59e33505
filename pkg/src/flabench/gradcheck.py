"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from . import layers, stabilizers
from .warp import AugRanges, make_matrices, sample_param_arrays, warp, warp_backward


# x87 extended precision where the platform has it, else plain float64
EXTENDED = np.longdouble if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps else np.float64


def numeric_grad(forward, inputs, i, probe, eps, work_dtype=None):
    """d<forward(*inputs), probe>/d inputs[i] by central differences.

    Output differences are formed before the dot product with ``probe`` so
    outputs that do not depend on the perturbed element cancel exactly.
    With ``work_dtype`` the forward passes run on copies cast to that type.
    """
    if work_dtype is not None:
        inputs = [np.asarray(x, dtype=work_dtype).copy() for x in inputs]
    x = inputs[i]
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        y_plus = np.asarray(forward(*inputs))
        flat[k] = old - eps
        y_minus = np.asarray(forward(*inputs))
        flat[k] = old
        diff = (y_plus - y_minus).astype(np.promote_types(y_plus.dtype, np.float64))
        gflat[k] = np.sum(diff * probe) / (2 * eps)
    return g


def max_relative_error(analytic, numeric, floor=0.0):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised (0/0 counts as 0)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(a - n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    rel = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return float(rel.max()) if rel.size else 0.0


def grad_check(forward, backward, inputs, eps=1e-6, rng=None, wrt=None, floor=0.0, scaled=False,
               work_dtype=None):
    """Largest relative error between analytic and numeric gradients.

    ``forward(*inputs)`` returns an array ``y``; ``backward(g, *inputs)``
    returns one gradient per input (``None`` for non-differentiable ones).
    The scalar being differentiated is ``<y, probe>`` for a random probe.

    With ``scaled`` the denominator is floored at the largest numeric entry
    of each gradient.  f32 checks need this: rounding of the forward pass
    leaves an absolute error of roughly ``ulp(y) / eps`` on every entry,
    which swamps near-zero entries.  ``work_dtype`` sets the precision of
    the finite-difference forward passes (see :func:`numeric_grad`).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs = [np.array(x, copy=True) for x in inputs]
    y = np.asarray(forward(*inputs))
    probe = rng.standard_normal(y.shape)
    grads = backward(probe.astype(y.dtype), *inputs)
    wrt = range(len(inputs)) if wrt is None else wrt
    err = 0.0
    for i in wrt:
        if grads[i] is None:
            continue
        num = numeric_grad(forward, inputs, i, probe, eps, work_dtype)
        fl = max(floor, float(np.abs(num).max())) if scaled else floor
        err = max(err, max_relative_error(grads[i], num, fl))
    return err


def _away_from_zero(rng, shape, dtype, margin=1e-3):
    x = rng.standard_normal(shape)
    while np.any(np.abs(x) < margin):
        bad = np.abs(x) < margin
        x[bad] = rng.standard_normal(int(bad.sum()))
    return x.astype(dtype)


def _spread(rng, shape, dtype, gap=0.05):
    """Distinct values at least ``gap`` apart, so max selections never tie."""
    n = int(np.prod(shape))
    x = (rng.permutation(n) - n / 2) * gap + rng.uniform(0, 0.1 * gap, n)
    return x.reshape(shape).astype(dtype)


def _conv_case(rng, dtype):
    stride = int(rng.integers(1, 3))
    x = rng.standard_normal((2, 2, 5, 6)).astype(dtype)
    w = rng.standard_normal((3, 2, 3, 3)).astype(dtype)
    b = rng.standard_normal(3).astype(dtype)

    def fwd(x, w, b):
        return layers.conv2d(x, w, b, stride=stride, pad=1)

    def bwd(g, x, w, b):
        return layers.conv2d_backward(g, x, w, stride=stride, pad=1)
    return fwd, bwd, [x, w, b]


def _relu_case(rng, dtype):
    x = _away_from_zero(rng, (2, 3, 4, 4), dtype)
    return layers.relu, lambda g, x: (layers.relu_backward(g, x),), [x]


def _dense_case(rng, dtype):
    x = rng.standard_normal((3, 5, 1, 1)).astype(dtype)
    W = rng.standard_normal((4, 5)).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    return layers.dense, lambda g, x, W, b: layers.dense_backward(g, x, W), [x, W, b]


def _gap_case(rng, dtype):
    x = rng.standard_normal((2, 3, 4, 5)).astype(dtype)
    return (layers.global_avg_pool,
            lambda g, x: (layers.global_avg_pool_backward(g, x.shape),), [x])


def _maxpool_case(rng, dtype):
    x = _spread(rng, (2, 2, 5, 6), dtype)

    def bwd(g, x):
        _, idx = layers.maxpool2(x)
        return (layers.maxpool2_backward(g, idx, x.shape),)
    return lambda x: layers.maxpool2(x)[0], bwd, [x]


def _blurpool_case(rng, dtype):
    x = _spread(rng, (2, 3, 6, 7), dtype)

    def bwd(g, x):
        return (stabilizers.blurpool_backward(g, stabilizers.blurpool(x)[1]),)
    return lambda x: stabilizers.blurpool(x)[0], bwd, [x]


def _aps_case(rng, dtype):
    x = _spread(rng, (2, 3, 6, 6), dtype)

    def bwd(g, x):
        return (stabilizers.aps_pool_backward(g, stabilizers.aps_pool(x)[1]),)
    return lambda x: stabilizers.aps_pool(x)[0], bwd, [x]


def _warp_case(rng, dtype):
    x = rng.standard_normal((2, 2, 7, 7)).astype(dtype)
    ranges = AugRanges(max_shift=3, max_angle=30, scale_lo=0.7, scale_hi=1.3, p_op=1.0)
    m = make_matrices(*sample_param_arrays(ranges, rng, 4), 7, 7).reshape(2, 2, 2, 3)
    return lambda x: warp(x, m), lambda g, x: (warp_backward(g, m),), [x]


CASES = {
    "conv2d": _conv_case,
    "relu": _relu_case,
    "dense": _dense_case,
    "global_avg_pool": _gap_case,
    "maxpool": _maxpool_case,
    "blurpool": _blurpool_case,
    "aps": _aps_case,
    "warp": _warp_case,
}


def run_suite(f64=True, trials=100, layers_=None):
    """Max relative error per layer over ``trials`` seeded random cases.

    f64 uses eps 1e-6 and elementwise errors, with the finite differences
    evaluated in extended precision so that forward rounding does not swamp
    near-zero gradient entries.  f32 uses eps 1e-3 and errors relative to
    the gradient scale.
    """
    dtype = np.float64 if f64 else np.float32
    eps = 1e-6 if f64 else 1e-3
    out = {}
    for name in layers_ or CASES:
        worst = 0.0
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            fwd, bwd, inputs = CASES[name](rng, dtype)
            worst = max(worst, grad_check(fwd, bwd, inputs, eps=eps, rng=rng, scaled=not f64,
                                          work_dtype=EXTENDED if f64 else None))
        out[name] = worst
    return out
