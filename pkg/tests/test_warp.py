import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flabench.tensor import make_rng
from flabench.warp import (FEATURE_RANGES, IDENTITY, INPUT_RANGES, AffineParams, AugRanges,
                           augment_images, depth_scaled_ranges, make_matrices, make_matrix,
                           sample_param_arrays, sample_params, warp, warp_backward)


def shift_oracle(x, dx, dy):
    """Integer shift right by dx / down by dy, zeros entering."""
    out = np.zeros_like(x)
    h, w = x.shape[2:]
    for y in range(h):
        for xx in range(w):
            sy, sx = y - dy, xx - dx
            if 0 <= sy < h and 0 <= sx < w:
                out[:, :, y, xx] = x[:, :, sy, sx]
    return out


def bilinear_oracle(x, m):
    """Per-pixel loop: bilinear sample at m @ (x, y, 1), zero outside."""
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for y in range(h):
        for xx in range(w):
            sx = m[0, 0] * xx + m[0, 1] * y + m[0, 2]
            sy = m[1, 0] * xx + m[1, 1] * y + m[1, 2]
            x0, y0 = int(np.floor(sx)), int(np.floor(sy))
            fx, fy = sx - x0, sy - y0
            for cy, cx, wt in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
                               (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)):
                if 0 <= cy < h and 0 <= cx < w:
                    out[:, :, y, xx] += wt * x[:, :, cy, cx]
    return out


def test_sample_params_identity_cases():
    rng = make_rng(0)
    assert all(sample_params(AugRanges(p_op=0.0), rng).is_identity for _ in range(50))
    degenerate = AugRanges(max_shift=0, max_angle=0, scale_lo=1, scale_hi=1, p_op=1.0)
    assert all(sample_params(degenerate, rng).is_identity for _ in range(50))


def test_sample_params_frequencies():
    dx, dy, angle, scale = sample_param_arrays(AugRanges(p_op=0.5), make_rng(1), 10_000)
    on = np.stack([(dx != 0) | (dy != 0), angle != 0, scale != 1])
    for rate in on.mean(axis=1):
        assert abs(rate - 0.5) < 0.02
    combos = {tuple(c) for c in on.T}
    assert combos == set(itertools.product([False, True], repeat=3))


def test_sample_params_ranges():
    dx, dy, angle, scale = sample_param_arrays(INPUT_RANGES, make_rng(2), 5000)
    assert np.abs(dx).max() <= 15 and np.abs(dy).max() <= 15
    assert np.abs(angle).max() <= 15
    assert scale.min() >= 0.4 and scale.max() <= 1.15


def test_make_matrix_examples():
    np.testing.assert_array_equal(make_matrix(AffineParams(), 5, 7), IDENTITY)
    assert make_matrix(AffineParams(dx=3), 8, 8)[0, 2] == -3
    with pytest.raises(ValueError):
        make_matrix(AffineParams(scale=0), 4, 4)


def test_rotate_90_pattern():
    w = 6
    x = np.arange(w * w, dtype=np.float64).reshape(1, 1, w, w)
    y = warp(x, make_matrix(AffineParams(angle=90), w, w))
    for yy in range(w):
        for xx in range(w):
            # output pixel (x, y) samples input column y, row w-1-x
            assert y[0, 0, yy, xx] == x[0, 0, w - 1 - xx, yy]


@settings(max_examples=50, deadline=None)
@given(st.floats(-45, 45), st.floats(0.3, 2.0))
def test_determinant(angle, scale):
    m = make_matrix(AffineParams(angle=angle, scale=scale), 9, 9)
    assert abs(np.linalg.det(m[:, :2]) - scale ** -2) < 1e-5


def test_identity_warp_is_bitwise(rng):
    x = rng.standard_normal((2, 3, 5, 6)).astype(np.float32)
    y = warp(x, make_matrix(AffineParams(), 5, 6))
    assert y.tobytes() == x.tobytes()
    assert warp_backward(x, IDENTITY).tobytes() == x.tobytes()


def test_warp_small_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
    np.testing.assert_array_equal(warp(x, make_matrix(AffineParams(dx=1), 2, 2))[0, 0], [[0, 1], [0, 3]])
    row = np.array([[[[0.0, 2.0]]]])
    assert warp(row, make_matrix(AffineParams(dx=0.5), 1, 2))[0, 0, 0, 1] == 1.0


@pytest.mark.parametrize("dx,dy", [(1, 0), (0, -2), (3, 4), (-5, 1), (7, -7), (9, 0)])
def test_integer_translation_is_exact_shift(rng, dx, dy):
    x = rng.standard_normal((2, 2, 8, 8)).astype(np.float32)
    y = warp(x, make_matrix(AffineParams(dx=dx, dy=dy), 8, 8))
    np.testing.assert_array_equal(y, shift_oracle(x, dx, dy))
    g = rng.standard_normal(x.shape).astype(np.float32)
    np.testing.assert_array_equal(warp_backward(g, make_matrix(AffineParams(dx=dx, dy=dy), 8, 8)),
                                  shift_oracle(g, -dx, -dy))


def test_warp_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 2, 7, 9))
    ranges = AugRanges(max_shift=3, max_angle=40, scale_lo=0.5, scale_hi=1.5, p_op=1.0)
    for _ in range(10):
        m = make_matrix(sample_params(ranges, rng), 7, 9)
        np.testing.assert_allclose(warp(x, m), bilinear_oracle(x, m), atol=1e-12)


def test_per_map_matrices(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    mats = make_matrices(*sample_param_arrays(FEATURE_RANGES, rng, 6), 6, 6).reshape(2, 3, 2, 3)
    y = warp(x, mats)
    for i in range(2):
        for c in range(3):
            np.testing.assert_allclose(y[i, c], bilinear_oracle(x[i:i + 1, c:c + 1], mats[i, c])[0, 0],
                                       atol=1e-12)
    per_sample = mats[:, 0]
    y2 = warp(x, per_sample)
    for i in range(2):
        np.testing.assert_allclose(y2[i], bilinear_oracle(x[i:i + 1], per_sample[i])[0], atol=1e-12)


def test_warp_linearity(rng):
    m = make_matrix(AffineParams(dx=1.3, dy=-0.7, angle=11, scale=0.9), 8, 8)
    x = rng.standard_normal((2, 2, 8, 8)).astype(np.float32)
    y = rng.standard_normal((2, 2, 8, 8)).astype(np.float32)
    a, b = 1.7, -0.4
    lhs = warp(a * x + b * y, m)
    rhs = a * warp(x, m) + b * warp(y, m)
    assert np.max(np.abs(lhs - rhs)) <= 1e-5 * np.max(np.abs(rhs))


def test_adjoint_identity_random_suite():
    rng = make_rng(5)
    ranges = AugRanges(max_shift=4, max_angle=30, scale_lo=0.6, scale_hi=1.4, p_op=0.8)
    for _ in range(50):
        m = make_matrix(sample_params(ranges, rng), 8, 8)
        x = rng.standard_normal((1, 1, 8, 8))
        g = rng.standard_normal((1, 1, 8, 8))
        lhs = np.sum(warp(x, m) * g)
        rhs = np.sum(x * warp_backward(g, m))
        assert abs(lhs - rhs) <= 1e-4 * abs(lhs)


def test_depth_scaled_ranges_examples():
    base = FEATURE_RANGES
    assert depth_scaled_ranges(base, 32, 32).max_shift == 15
    assert depth_scaled_ranges(base, 32, 2).max_shift == 1
    assert depth_scaled_ranges(base, 32, 16).max_shift == 8
    r = depth_scaled_ranges(base, 64, 8)
    assert (r.max_angle, r.scale_lo, r.scale_hi) == (base.max_angle, base.scale_lo, base.scale_hi)


def test_depth_scaled_ranges_monotone():
    for input_h in (16, 32, 64, 224):
        shifts = [depth_scaled_ranges(FEATURE_RANGES, input_h, f).max_shift
                  for f in range(input_h, 0, -1)]
        assert all(1 <= s <= 15 for s in shifts)
        assert all(a >= b for a, b in zip(shifts, shifts[1:]))


def test_augment_images_identity_and_determinism(rng):
    batch = rng.random((4, 1, 16, 16)).astype(np.float32)
    out = augment_images(batch, AugRanges(p_op=0.0), make_rng(0))
    assert out.tobytes() == batch.tobytes()
    a = augment_images(batch, INPUT_RANGES, make_rng(3))
    b = augment_images(batch, INPUT_RANGES, make_rng(3))
    assert a.tobytes() == b.tobytes()
    assert a.shape == batch.shape


def test_scale_half_shrinks_centered_square():
    x = np.zeros((1, 1, 32, 32), np.float32)
    x[0, 0, 8:24, 8:24] = 1.0
    y = warp(x, make_matrix(AffineParams(scale=0.5), 32, 32))[0, 0]
    expect = np.zeros((32, 32), np.float32)
    expect[12:20, 12:20] = 1.0
    np.testing.assert_array_equal(y, expect)
