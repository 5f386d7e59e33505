import numpy as np
import pytest
from scipy.signal import correlate2d

from flabench import layers
from flabench.stabilizers import (OFFSETS, aps, aps_backward, blurpool, blurpool_backward,
                                  polyphase_components, triangle_1d, triangle_kernel)


def test_triangle_kernels():
    np.testing.assert_allclose(triangle_1d(3), [0.25, 0.5, 0.25])
    np.testing.assert_allclose(triangle_kernel(3).weights, np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16)
    np.testing.assert_array_equal(triangle_kernel(1).weights, [[1.0]])
    for n in (1, 3, 5, 7):
        assert abs(triangle_kernel(n).weights.sum() - 1) < 1e-6
    with pytest.raises(ValueError):
        triangle_kernel(4)


def blur_subsample_oracle(x, k):
    out = np.zeros(x.shape[:2] + ((x.shape[2] + 1) // 2, (x.shape[3] + 1) // 2))
    for i in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[i, c] = correlate2d(x[i, c], k.weights, mode="same", boundary="fill")[::2, ::2]
    return out


def dense_max_oracle(x):
    n, c, h, w = x.shape
    out = np.empty_like(x)
    for r in range(h):
        for s in range(w):
            out[:, :, r, s] = x[:, :, r:r + 2, s:s + 2].max(axis=(2, 3))
    return out


def test_blurpool_constant_interior():
    x = np.full((1, 2, 10, 10), 3.0)
    for max_first in (False, True):
        y, _ = blurpool(x, max_first=max_first)
        np.testing.assert_allclose(y[:, :, 1:-1, 1:-1], 3.0)


def test_blurpool_impulse():
    x = np.zeros((1, 1, 8, 8))
    x[0, 0, 4, 4] = 1.0
    y, _ = blurpool(x, max_first=False)
    # even-index samples of the blurred impulse: rows/cols 4 -> 2 pick the centre weight,
    # rows/cols 3 and 5 are odd and dropped
    expect = np.zeros((4, 4))
    expect[2, 2] = 0.25
    np.testing.assert_allclose(y[0, 0], expect)
    # impulse on an odd site: only the four diagonal taps land on even positions
    x[0, 0, 4, 4], x[0, 0, 3, 3] = 0.0, 1.0
    y, _ = blurpool(x, max_first=False)
    expect = np.zeros((4, 4))
    expect[1:3, 1:3] = 1 / 16
    np.testing.assert_allclose(y[0, 0], expect)


@pytest.mark.parametrize("shape", [(2, 3, 8, 8), (1, 2, 7, 9)])
def test_blurpool_matches_two_step_oracle(rng, shape):
    x = rng.standard_normal(shape)
    k = triangle_kernel(3)
    y, _ = blurpool(x, k, max_first=False)
    np.testing.assert_allclose(y, blur_subsample_oracle(x, k), atol=1e-12)
    y, _ = blurpool(x, k, max_first=True)
    np.testing.assert_allclose(y, blur_subsample_oracle(dense_max_oracle(x), k), atol=1e-12)


def test_blurpool_commutes_with_channel_permutation(rng):
    x = rng.standard_normal((2, 5, 8, 8))
    perm = rng.permutation(5)
    np.testing.assert_array_equal(blurpool(x[:, perm])[0], blurpool(x)[0][:, perm])


def test_blurpool_adjoint(rng):
    x = rng.standard_normal((2, 3, 9, 8))
    y, cache = blurpool(x, max_first=False)
    g = rng.standard_normal(y.shape)
    lhs, rhs = np.sum(y * g), np.sum(x * blurpool_backward(g, cache))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_polyphase_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert [c.item() for c in polyphase_components(x)] == [1, 2, 3, 4]
    comps = polyphase_components(np.zeros((1, 1, 3, 3)))
    assert comps[0].shape[2:] == (2, 2) and comps[3].shape[2:] == (1, 1)


def test_polyphase_reassembly(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    rebuilt = np.zeros_like(x)
    for (i, j), comp in zip(OFFSETS, polyphase_components(x)):
        rebuilt[:, :, i::2, j::2] = comp
    np.testing.assert_array_equal(rebuilt, x)


def test_aps_examples():
    y, choice = aps(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert y.item() == 4 and choice.component_index.tolist() == [3]
    assert choice.norm_value.tolist() == [4.0]
    _, choice = aps(np.full((2, 3, 4, 4), 0.5))
    assert choice.component_index.tolist() == [0, 0]


def test_aps_choice_has_max_norm(rng):
    x = rng.standard_normal((5, 3, 6, 6))
    _, choice = aps(x)
    norms = np.stack([np.sqrt((c ** 2).sum(axis=(1, 2, 3))) for c in polyphase_components(x)], axis=1)
    for i in range(5):
        assert norms[i, choice.component_index[i]] == norms[i].max()
    _, per = aps(x, per_channel=True)
    assert per.component_index.shape == (5, 3)


def test_aps_circular_shift_brute_force(rng):
    x = rng.standard_normal((1, 1, 4, 4))
    y0, c0 = aps(x)
    for a in (0, 1):
        for b in (0, 1):
            xs = np.roll(x, (a, b), axis=(2, 3))
            ys, cs = aps(xs)
            # enumerate all components of the shifted map; the winner holds the original winner's values
            i0, j0 = OFFSETS[c0.component_index[0]]
            assert cs.component_index[0] == OFFSETS.index(((i0 + a) % 2, (j0 + b) % 2))
            assert sorted(ys.ravel()) == sorted(y0.ravel())


def test_aps_scale_equivariant_choice(rng):
    x = rng.standard_normal((4, 2, 6, 6))
    _, c = aps(x)
    for alpha in (0.01, 0.5, 3.0, 100.0):
        assert aps(alpha * x)[1].component_index.tolist() == c.component_index.tolist()


def test_aps_backward_routes_to_selected(rng):
    x = rng.standard_normal((2, 2, 4, 4))
    y, choice = aps(x)
    g = aps_backward(np.ones_like(y), choice, x.shape)
    for i in range(2):
        oi, oj = OFFSETS[choice.component_index[i]]
        mask = np.zeros((4, 4))
        mask[oi::2, oj::2] = 1
        np.testing.assert_array_equal(g[i, 0], mask)


def test_aps_odd_size(rng):
    x = rng.standard_normal((1, 1, 5, 5))
    y, choice = aps(x)
    assert y.shape == (1, 1, 3, 3)
    g = aps_backward(np.ones_like(y), choice, x.shape)
    assert g.shape == x.shape
