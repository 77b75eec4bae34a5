"""Tests for convolution, normalisation and block layers"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_equal

from timbrewm import layers
from timbrewm.autodiff import Tensor, ShapeError, sum as tsum, mul
from timbrewm.optim import grad_check


def _weighted(t, seed=0):
    return tsum(mul(t, Tensor(np.random.default_rng(seed).standard_normal(t.shape))))


def _naive_conv(x, w, b):
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((c_out,) + x.shape[1:])
    for o in range(c_out):
        for t in range(x.shape[1]):
            for h in range(x.shape[2]):
                out[o, t, h] = np.sum(w[o] * xp[:, t:t + kh, h:h + kw]) + b[o]
    return out


@pytest.fixture
def conv_inputs():
    rng = np.random.default_rng(5)
    return rng.standard_normal((2, 5, 6)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)


def test_conv2d_matches_naive(conv_inputs):
    x, w, b = conv_inputs

    out = layers.conv2d(Tensor(x), Tensor(w), Tensor(b))

    assert out.shape == (3, 5, 6)
    assert_allclose(out.data, _naive_conv(x, w, b), atol=1e-12)


@pytest.mark.parametrize('pad_mode', layers.PAD_MODES)
def test_conv2d_gradients(conv_inputs, pad_mode):
    err = grad_check(lambda x, w, b: _weighted(layers.conv2d(x, w, b, pad_mode)), list(conv_inputs), n_samples=24)

    assert err <= 1e-4


def test_conv2d_time_edge_keeps_constant_frames():
    rng = np.random.default_rng(6)
    column = rng.standard_normal((2, 1, 7))
    x = np.repeat(column, 9, axis=1)
    w, b = rng.standard_normal((4, 2, 3, 3)), rng.standard_normal(4)

    out = layers.conv2d(Tensor(x), Tensor(w), Tensor(b), 'time_edge').data

    assert_allclose(out, np.repeat(out[:, :1], 9, axis=1), atol=1e-12)


def test_conv2d_errors(conv_inputs):
    x, w, b = conv_inputs
    with pytest.raises(ShapeError):
        layers.conv2d(Tensor(x[:1]), Tensor(w), Tensor(b))
    with pytest.raises(ShapeError):
        layers.conv2d(Tensor(x), Tensor(np.ones((3, 2, 2, 2))), Tensor(b))
    with pytest.raises(ShapeError):
        layers.conv2d(Tensor(x), Tensor(w), Tensor(b[:2]))
    with pytest.raises(ValueError):
        layers.conv2d(Tensor(x), Tensor(w), Tensor(b), 'reflect')


def test_gated_conv_matches_two_convolutions():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 6, 7))
    wa, ba = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    wb, bb = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)

    out = layers.gated_conv(Tensor(x), Tensor(wa), Tensor(ba), Tensor(wb), Tensor(bb), 'time_edge')
    a = layers.conv2d(Tensor(x), Tensor(wa), Tensor(ba), 'time_edge').data
    b = layers.conv2d(Tensor(x), Tensor(wb), Tensor(bb), 'time_edge').data

    assert out.shape == (3, 6, 7)
    assert_allclose(out.data, a / (1 + np.exp(-b)), atol=1e-12)


@pytest.mark.parametrize('pad_mode', layers.PAD_MODES)
def test_gated_conv_gradients(pad_mode):
    rng = np.random.default_rng(16)
    inputs = [rng.standard_normal((2, 4, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3),
              rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)]

    err = grad_check(lambda x, wa, ba, wb, bb: _weighted(layers.gated_conv(x, wa, ba, wb, bb, pad_mode)), inputs)

    assert err <= 1e-4


def test_conv2d_pointwise_gradients():
    rng = np.random.default_rng(17)
    inputs = [rng.standard_normal((3, 4, 5)), rng.standard_normal((2, 3, 1, 1)), rng.standard_normal(2)]

    out = layers.conv2d(*[Tensor(a) for a in inputs])

    assert_allclose(out.data, np.einsum('oc,cth->oth', inputs[1][:, :, 0, 0], inputs[0]) + inputs[2][:, None, None])
    assert grad_check(lambda x, w, b: _weighted(layers.conv2d(x, w, b)), inputs) <= 1e-4


def test_linear():
    rng = np.random.default_rng(7)
    x, w, b = rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)

    out = layers.linear(Tensor(x), Tensor(w), Tensor(b))

    assert_allclose(out.data, x @ w.T + b)
    assert grad_check(lambda x, w, b: _weighted(layers.linear(x, w, b)), [x, w, b]) <= 1e-6


def test_linear_on_vector():
    out = layers.linear(Tensor(np.ones(2)), Tensor(np.eye(2)), Tensor(np.zeros(2)))

    assert out.shape == (2,)
    with pytest.raises(ShapeError):
        layers.linear(Tensor(np.ones(3)), Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_instance_norm_standardises():
    x = np.random.default_rng(8).standard_normal((3, 4, 5)) * 7 + 2

    out = layers.instance_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3))).data

    assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-12)
    assert_allclose(out.std(axis=(1, 2)), 1.0, atol=1e-5)


def test_instance_norm_gradients():
    rng = np.random.default_rng(9)
    inputs = [rng.standard_normal((2, 3, 4)), rng.standard_normal(2), rng.standard_normal(2)]

    assert grad_check(lambda x, g, b: _weighted(layers.instance_norm(x, g, b)), inputs) <= 1e-4


def test_gated_block_identity_skip():
    rng = np.random.default_rng(10)
    p = layers.init_gated_block(rng, 2, 2, dtype=np.float64)
    p = {k: Tensor(v) for k, v in p.items()}
    p['conv_a.weight'] = Tensor(np.zeros((2, 2, 3, 3)))
    p['conv_a.bias'] = Tensor(np.zeros(2))
    x = rng.standard_normal((2, 4, 5))

    out = layers.gated_block(Tensor(x), p)

    assert 'proj.weight' not in p
    assert_allclose(out.data, x)


def test_gated_block_needs_projection():
    rng = np.random.default_rng(11)
    p = {k: Tensor(v) for k, v in layers.init_gated_block(rng, 2, 3, dtype=np.float64).items()}
    del p['proj.weight']

    with pytest.raises(ShapeError):
        layers.gated_block(Tensor(np.ones((2, 4, 5))), p)


@pytest.mark.parametrize('c_in,c_out', [(2, 2), (2, 3)])
def test_gated_block_gradients(c_in, c_out):
    rng = np.random.default_rng(12)
    arrays = layers.init_gated_block(rng, c_in, c_out, dtype=np.float64)
    names = list(arrays)
    x = rng.standard_normal((c_in, 4, 5))

    def fn(x, *tensors):
        return _weighted(layers.gated_block(x, dict(zip(names, tensors)), 'time_edge'))

    assert grad_check(fn, [x] + list(arrays.values())) <= 1e-4


def test_relu_block_gradients():
    rng = np.random.default_rng(13)
    arrays = layers.init_relu_block(rng, 2, 3, dtype=np.float64)
    names = list(arrays)
    x = rng.standard_normal((2, 4, 5))

    def fn(x, *tensors):
        return _weighted(layers.relu_block(x, dict(zip(names, tensors))))

    assert grad_check(fn, [x] + list(arrays.values())) <= 1e-4


def test_init_shapes_and_bounds():
    rng = np.random.default_rng(14)

    w, b = layers.init_conv(rng, 4, 3, 3)
    lw, lb = layers.init_linear(rng, 5, 16)
    block = layers.init_relu_block(rng, 3, 4)

    assert w.shape == (4, 3, 3, 3) and b.shape == (4,)
    assert w.dtype == np.float32
    assert np.all(np.abs(w) <= 1 / np.sqrt(27))
    assert lw.shape == (5, 16)
    assert np.all(np.abs(lw) <= 0.25)
    assert_equal(block['norm.weight'], 1.0)
    assert_equal(block['norm.bias'], 0.0)
