import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnmix import tensor as T
from gradcheck import TOL, check_gradients

rng = np.random.default_rng(0)


def away_from_zero(shape, lo=0.1, hi=1.0):
    mag = rng.uniform(lo, hi, shape)
    return mag * rng.choice([-1.0, 1.0], shape)


def test_backward_requires_scalar():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(T.ShapeError):
        (x * 2.0).backward()


def test_simple_chain_rule():
    x = T.Tensor(3.0, requires_grad=True)
    y = x * x + 2.0 * x
    y.backward()
    assert x.grad == pytest.approx(8.0)


def test_grad_accumulates_over_reuse():
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x + x + x).sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, 3.0])


def test_precision_context_restores_dtype():
    with T.precision(np.float64):
        assert T.Tensor(1.0).data.dtype == np.float64
    assert T.Tensor(1.0).data.dtype == np.float32


ELEMENTWISE = {
    "add": (lambda a, b: a + b, 2),
    "sub": (lambda a, b: a - b, 2),
    "mul": (lambda a, b: a * b, 2),
    "div": (lambda a, b: a / (T.absolute(b) + 0.5), 2),
    "power": (lambda a: T.power(T.absolute(a) + 0.2, 1.7), 1),
    "exp": (lambda a: T.exp(a), 1),
    "log": (lambda a: T.log(T.absolute(a) + 0.1), 1),
    "sqrt": (lambda a: T.sqrt(T.absolute(a) + 0.1), 1),
    "absolute": (lambda a: T.absolute(a), 1),
    "relu": (lambda a: T.relu(a), 1),
    "leaky_relu": (lambda a: T.leaky_relu(a), 1),
    "sigmoid": (lambda a: T.sigmoid(a), 1),
    "tanh": (lambda a: T.tanh(a), 1),
    "clamp": (lambda a: T.clamp(a, -0.5, 0.5), 1),
    "minimum": (lambda a, b: T.minimum(a, b), 2),
    "maximum": (lambda a, b: T.maximum(a, b), 2),
    "remainder": (lambda a: T.remainder(a * 0.3 + 5.05, 1.0), 1),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_gradients(name):
    fn, arity = ELEMENTWISE[name]
    args = [away_from_zero((3, 4)) for _ in range(arity)]
    if name in ("minimum", "maximum"):
        args[1] = args[0] + rng.choice([-0.3, 0.3], (3, 4))
    if name == "clamp":
        args[0] = np.where(np.abs(np.abs(args[0]) - 0.5) < 0.05, 0.3, args[0])
    assert check_gradients(fn, *args) <= TOL


def test_broadcast_gradients():
    assert check_gradients(lambda a, b: a * b + b, rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))) <= TOL
    assert check_gradients(lambda a, b: a / (b * b + 1.0), rng.normal(size=(2, 1, 4)),
                           rng.normal(size=(1, 3, 1))) <= TOL


@pytest.mark.parametrize("name", ["sum", "sum_axis", "mean", "mean_axis", "reshape", "getitem",
                                  "channels", "concat", "matmul"])
def test_structural_gradients(name):
    x = rng.normal(size=(2, 4, 4, 3))
    fns = {
        "sum": lambda a: a.sum(),
        "sum_axis": lambda a: a.sum(axis=(1, 2), keepdims=True),
        "mean": lambda a: a.mean(),
        "mean_axis": lambda a: a.mean(axis=-1),
        "reshape": lambda a: a.reshape(2, 48) * 1.0,
        "getitem": lambda a: a[:, 1:3, ::2, :],
        "channels": lambda a: T.channels(a, 1, 3),
        "concat": lambda a: T.concat([a, a * 2.0], axis=-1),
        "matmul": lambda a: T.matmul(a, T.Tensor(np.arange(6.0).reshape(3, 2) / 5.0)),
    }
    assert check_gradients(fns[name], x) <= TOL


def test_matmul_gradient_wrt_matrix():
    a = rng.normal(size=(2, 3, 3, 4))
    b = rng.normal(size=(4, 2))
    assert check_gradients(lambda x, w: T.matmul(x, w), a, b) <= TOL


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3])
def test_conv2d_gradients(stride, k):
    x = rng.normal(size=(2, 8, 8, 3))
    w = rng.normal(size=(k, k, 3, 4)) * 0.3
    b = rng.normal(size=(4,))
    assert check_gradients(lambda x_, w_, b_: T.conv2d(x_, w_, b_, stride=stride), x, w, b) <= TOL


def test_conv2d_matches_direct_convolution():
    x = rng.normal(size=(1, 5, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    out = T.conv2d(T.Tensor(x), T.Tensor(w)).data
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 3))
    for i in range(5):
        for j in range(6):
            ref[0, i, j] = np.einsum("abc,abcd->d", pad[0, i:i + 3, j:j + 3], w)
    np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-5)


def test_conv2d_stride2_is_subsampled_stride1():
    x = T.Tensor(rng.normal(size=(1, 8, 8, 2)))
    w = T.Tensor(rng.normal(size=(3, 3, 2, 2)))
    full = T.conv2d(x, w).data
    np.testing.assert_allclose(T.conv2d(x, w, stride=2).data, full[:, ::2, ::2], rtol=1e-5, atol=1e-5)


def test_conv2d_channel_mismatch():
    with pytest.raises(T.ShapeError):
        T.conv2d(T.Tensor(np.zeros((1, 4, 4, 3))), T.Tensor(np.zeros((3, 3, 2, 1))))


@pytest.mark.parametrize("name", ["upsample2x", "avgpool2x", "resize_conv", "instance_norm",
                                  "filter1d_h", "filter1d_w"])
def test_spatial_gradients(name):
    x = rng.normal(size=(2, 8, 8, 3))
    kernel = np.array([0.2, 0.5, 0.3])
    if name == "upsample2x":
        assert check_gradients(T.upsample2x, x) <= TOL
    elif name == "avgpool2x":
        assert check_gradients(T.avgpool2x, x) <= TOL
    elif name == "resize_conv":
        w = rng.normal(size=(3, 3, 3, 2)) * 0.3
        assert check_gradients(lambda a, w_: T.resize_conv(a, w_), x, w) <= TOL
    elif name == "instance_norm":
        scale, shift = rng.uniform(0.5, 1.5, 3), rng.normal(size=3)
        assert check_gradients(T.instance_norm, x, scale, shift) <= TOL
    else:
        axis = 1 if name == "filter1d_h" else 2
        assert check_gradients(lambda a: T.filter1d_valid(a, kernel, axis), x) <= TOL


def test_upsample_then_pool_is_identity():
    x = rng.normal(size=(1, 4, 4, 2))
    np.testing.assert_allclose(T.avgpool2x(T.upsample2x(T.Tensor(x))).data, x, rtol=1e-6)


def test_instance_norm_statistics():
    x = T.Tensor(rng.normal(3.0, 2.0, size=(2, 8, 8, 4)))
    y = T.instance_norm(x, T.Tensor(np.ones(4)), T.Tensor(np.zeros(4))).data
    np.testing.assert_allclose(y.mean(axis=(1, 2)), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=(1, 2)), 1.0, atol=1e-3)


def test_instance_norm_rejects_single_pixel():
    with pytest.raises(T.ShapeError):
        T.instance_norm(T.Tensor(np.zeros((1, 1, 1, 2))), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)))


def test_he_uniform_bounds():
    w = T.he_uniform(np.random.default_rng(1), (3, 3, 8, 16))
    limit = np.sqrt(6.0 / (3 * 3 * 8))
    assert np.abs(w).max() <= limit
    assert w.std() == pytest.approx(limit / np.sqrt(3), rel=0.05)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_sum_gradient_is_ones(values):
    x = T.Tensor(np.array(values), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(len(values)))
