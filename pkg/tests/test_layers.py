import numpy as np
import pytest

from flabench import layers
from flabench.errors import DataError, ShapeError
from flabench.gradcheck import grad_check, max_relative_error


def conv_oracle(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    y = np.zeros((n, o, oh, ow))
    for i in range(n):
        for j in range(o):
            for r in range(oh):
                for s in range(ow):
                    patch = xp[i, :, r * stride:r * stride + k, s * stride:s * stride + k]
                    y[i, j, r, s] = np.sum(patch * w[j]) + b[j]
    return y


def test_conv_all_ones_example():
    x = np.ones((1, 1, 3, 3), np.float32)
    w = np.ones((1, 1, 3, 3), np.float32)
    y = layers.conv2d(x, w, np.zeros(1, np.float32), stride=1, pad=1)
    assert y[0, 0, 1, 1] == 9
    assert y[0, 0, 0, 0] == y[0, 0, 0, 2] == y[0, 0, 2, 0] == y[0, 0, 2, 2] == 4


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 5, 4)).astype(np.float32)
    w = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1
    np.testing.assert_array_equal(layers.conv2d(x, w, np.zeros(3, np.float32)), x)


def test_conv_zero_input_gives_bias(rng):
    w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    b = np.arange(4, dtype=np.float32)
    y = layers.conv2d(np.zeros((1, 2, 4, 4), np.float32), w, b)
    np.testing.assert_array_equal(y, np.broadcast_to(b.reshape(1, 4, 1, 1), y.shape))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (2, 0)])
def test_conv_matches_loop_oracle(rng, stride, pad):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    y = layers.conv2d(x, w, b, stride=stride, pad=pad)
    assert y.shape[2] == (7 + 2 * pad - 3) // stride + 1
    np.testing.assert_allclose(y, conv_oracle(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        layers.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_backward_zero_grad(rng):
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    gx, gw, gb = layers.conv2d_backward(np.zeros((2, 4, 5, 5), np.float32), x, w)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_single_pixel():
    # 1x1 map, pad 1: only the centre tap sees the input, so y = w[1,1]*x + b
    x = np.array([[[[2.0]]]])
    w = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    g = np.array([[[[3.0]]]])
    gx, gw, gb = layers.conv2d_backward(g, x, w)
    expect = np.zeros((1, 1, 3, 3))
    expect[0, 0, 1, 1] = 3.0 * 2.0
    np.testing.assert_array_equal(gw, expect)
    assert gx.item() == 3.0 * w[0, 0, 1, 1]
    assert gb.item() == 3.0


@pytest.mark.parametrize("dtype,eps,tol", [(np.float32, 1e-3, 1e-2), (np.float64, 1e-6, 1e-5)])
def test_conv_backward_finite_differences(dtype, eps, tol):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 2, 4, 5)).astype(dtype)
    w = rng.standard_normal((3, 2, 3, 3)).astype(dtype)
    b = rng.standard_normal(3).astype(dtype)
    err = grad_check(lambda x, w, b: layers.conv2d(x, w, b),
                     lambda g, x, w, b: layers.conv2d_backward(g, x, w), [x, w, b], eps=eps, rng=rng,
                     scaled=dtype == np.float32)
    assert err < tol


def test_conv_circular_padding_matches_wrap():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = np.zeros(3)
    y = layers.conv2d(x, w, b, pad=1, mode="circular")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="wrap")
    np.testing.assert_allclose(y, layers.conv2d(xp, w, b, pad=0), atol=1e-12)
    err = grad_check(lambda x: layers.conv2d(x, w, b, mode="circular"),
                     lambda g, x: (layers.conv2d_backward(g, x, w, mode="circular")[0],), [x])
    assert err < 1e-5


def test_relu_examples():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(layers.relu(x), [0, 0, 2])
    np.testing.assert_array_equal(layers.relu(np.array([0.0, 3.0])), [0, 3])
    np.testing.assert_array_equal(layers.relu_backward(np.array([5.0, 5.0]), np.array([-1.0, 2.0])), [0, 5])


def test_maxpool_example():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y, idx = layers.maxpool2(x)
    assert y.ravel().tolist() == [4.0]
    g = layers.maxpool2_backward(np.ones_like(y), idx, x.shape)
    np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])


def test_maxpool_odd_size_ceil():
    x = np.arange(25.0).reshape(1, 1, 5, 5)
    y, _ = layers.maxpool2(x)
    assert y.shape == (1, 1, 3, 3)
    assert y[0, 0, 2, 2] == 24


def test_global_avg_pool_examples():
    x = np.array([[[[1.0, 3.0], [5.0, 7.0]]]])
    assert layers.global_avg_pool(x).item() == 4
    assert layers.global_avg_pool(np.full((1, 2, 3, 3), 2.5)).ravel().tolist() == [2.5, 2.5]
    g = layers.global_avg_pool_backward(np.array([[[[8.0]]]]), x.shape)
    np.testing.assert_array_equal(g, np.full(x.shape, 2.0))


def test_dense_examples(rng):
    x = rng.standard_normal((3, 4, 1, 1))
    np.testing.assert_array_equal(layers.dense(x, np.eye(4), np.zeros(4)), x.reshape(3, 4))
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(layers.dense(x, np.zeros((2, 4)), b), np.tile(b, (3, 1)))
    with pytest.raises(ShapeError):
        layers.dense(x, np.zeros((2, 5)), b)


def test_dense_gradient_f32():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4, 1, 1)).astype(np.float32)
    W = rng.standard_normal((5, 4)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    err = grad_check(layers.dense, lambda g, x, W, b: layers.dense_backward(g, x, W), [x, W, b],
                     eps=1e-3, rng=rng, scaled=True)
    assert err < 1e-2


def test_softmax_xent_uniform_is_log_c():
    loss, grad = layers.softmax_xent(np.zeros((4, 7)), np.array([0, 1, 2, 6]))
    assert loss == pytest.approx(np.log(7), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_softmax_xent_peaked_and_range():
    logits = np.array([[50.0, 0.0, 0.0]])
    loss, _ = layers.softmax_xent(logits, np.array([0]))
    assert loss < 1e-15
    with pytest.raises(DataError):
        layers.softmax_xent(logits, np.array([3]))


def test_softmax_xent_gradient():
    rng = np.random.default_rng(9)
    z = rng.standard_normal((4, 5))
    y = np.array([0, 4, 2, 2])
    _, g = layers.softmax_xent(z, y)
    num = np.zeros_like(z)
    for i in range(4):
        for j in range(5):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += 1e-6
            zm[i, j] -= 1e-6
            num[i, j] = (layers.softmax_xent(zp, y)[0] - layers.softmax_xent(zm, y)[0]) / 2e-6
    assert max_relative_error(g, num) < 1e-5
    np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-15)


def test_dense_max_gradient_and_circular():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 5, 4))
    for mode in ("zero", "circular"):
        err = grad_check(lambda x: layers.dense_max(x, mode)[0],
                         lambda g, x: (layers.dense_max_backward(g, layers.dense_max(x, mode)[1], mode),),
                         [x], rng=rng)
        assert err < 1e-5


def _inner(a, b):
    return float(np.sum(a.astype(np.float64) * b.astype(np.float64)))


def test_adjoint_identities_f32():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    zero_b = np.zeros(4, np.float32)
    y = layers.conv2d(x, w, zero_b)
    g = rng.standard_normal(y.shape).astype(np.float32)
    lhs, rhs = _inner(y, g), _inner(x, layers.conv2d_backward(g, x, w)[0])
    assert abs(lhs - rhs) <= 1e-4 * abs(lhs)

    xd = rng.standard_normal((3, 6, 1, 1)).astype(np.float32)
    W = rng.standard_normal((4, 6)).astype(np.float32)
    gd = rng.standard_normal((3, 4)).astype(np.float32)
    lhs = _inner(layers.dense(xd, W, np.zeros(4, np.float32)), gd)
    rhs = _inner(xd, layers.dense_backward(gd, xd, W)[0])
    assert abs(lhs - rhs) <= 1e-4 * abs(lhs)

    gp = rng.standard_normal((2, 3, 1, 1)).astype(np.float32)
    lhs = _inner(layers.global_avg_pool(x), gp)
    rhs = _inner(x, layers.global_avg_pool_backward(gp, x.shape))
    assert abs(lhs - rhs) <= 1e-4 * abs(lhs)
