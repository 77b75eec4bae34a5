"""Tests for the reverse-mode differentiation engine"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_equal

from timbrewm import autodiff as ad
from timbrewm.autodiff import Tensor, parameter, ShapeError, DivergenceError
from timbrewm.optim import grad_check


RNG = np.random.default_rng(42)
A = RNG.standard_normal((3, 4))
B = RNG.standard_normal((3, 4))
POS = np.abs(RNG.standard_normal((3, 4))) + 0.5


def _weighted(t):
    return ad.sum(ad.mul(t, Tensor(np.random.default_rng(0).standard_normal(t.shape))))


@pytest.mark.parametrize('name,fn,inputs', [
    ('add', lambda a, b: _weighted(ad.add(a, b)), [A, B]),
    ('sub', lambda a, b: _weighted(ad.sub(a, b)), [A, B]),
    ('mul', lambda a, b: _weighted(ad.mul(a, b)), [A, B]),
    ('div', lambda a, b: _weighted(ad.div(a, b)), [A, POS]),
    ('neg', lambda a: _weighted(ad.neg(a)), [A]),
    ('add_n', lambda a, b: _weighted(ad.add_n([a, b, a])), [A, B]),
    ('scale', lambda a, s: _weighted(ad.scale(a, s)), [A, np.array(1.7)]),
    ('reciprocal', lambda a: _weighted(ad.reciprocal(a)), [POS]),
    ('square', lambda a: _weighted(ad.square(a)), [A]),
    ('sqrt', lambda a: _weighted(ad.sqrt(a)), [POS]),
    ('exp', lambda a: _weighted(ad.exp(a)), [A]),
    ('log', lambda a: _weighted(ad.log(a)), [POS]),
    ('hypot', lambda a, b: _weighted(ad.hypot(a, b)), [A, B]),
    ('matmul', lambda a, b: _weighted(ad.matmul(a, b)), [A, B.T.copy()]),
    ('sigmoid', lambda a: _weighted(ad.sigmoid(a)), [A]),
    ('tanh', lambda a: _weighted(ad.tanh(a)), [A]),
    ('leaky_relu', lambda a: _weighted(ad.leaky_relu(a)), [A]),
    ('clamp_min', lambda a: _weighted(ad.clamp_min(a, 0.1)), [A]),
    ('clip', lambda a: _weighted(ad.clip(a, -0.5, 0.5)), [A]),
    ('mean', lambda a: ad.mean(ad.square(a)), [A]),
    ('max_abs', lambda a: ad.max_abs(a), [A]),
    ('reshape', lambda a: _weighted(ad.reshape(a, (2, 6))), [A]),
    ('take', lambda a: _weighted(ad.take(ad.reshape(a, (12,)), np.array([[0, 3, 3], [11, 5, 0]]))), [A]),
    ('scatter_add', lambda a: _weighted(ad.scatter_add(a, np.array([[0, 1, 1, 2]] * 3), 5)), [A]),
    ('concat_channels', lambda a, b: _weighted(ad.concat_channels([ad.reshape(a, (1, 3, 4)),
                                                                   ad.reshape(b, (1, 3, 4))])), [A, B]),
    ('repeat_time', lambda a: _weighted(ad.repeat_time(ad.reshape(a, (3, 1, 4)), 5)), [A]),
    ('mean_time', lambda a: _weighted(ad.mean_time(ad.reshape(a, (1, 3, 4)))), [A]),
    ('avg_pool_all', lambda a: _weighted(ad.avg_pool_all(ad.reshape(a, (2, 3, 2)))), [A]),
])
def test_op_gradients(name, fn, inputs):
    assert grad_check(fn, inputs) <= 1e-4


def test_operator_overloads():
    a = parameter(np.array([1.0, 2.0]))
    b = parameter(np.array([3.0, 5.0]))

    out = ad.sum((a + b) * a - b / 2 + (-a))
    out.backward()

    assert_allclose(out.item(), (4 * 1 + 7 * 2) - 4 - 3)
    assert_allclose(a.grad, 2 * a.data + b.data - 1)
    assert_allclose(b.grad, a.data - 0.5)


def test_scalar_expansion():
    a = parameter(np.array([1.0, 2.0], dtype=np.float32))

    out = 2 * a + 1

    assert out.dtype == np.float32
    assert_equal(out.data, [3.0, 5.0])


def test_no_broadcasting():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_needs_seed_for_arrays():
    a = parameter(np.ones(3))

    with pytest.raises(ShapeError):
        ad.mul(a, a).backward()
    with pytest.raises(ShapeError):
        ad.mul(a, a).backward(np.ones(2))


def test_gradient_accumulates_over_shared_nodes():
    a = parameter(np.array(3.0))
    b = ad.mul(a, a)

    ad.add(b, b).backward()

    assert_allclose(a.grad, 12.0)


def test_backward_twice_accumulates():
    a = parameter(np.array(2.0))

    ad.square(a).backward()
    ad.square(a).backward()

    assert_allclose(a.grad, 8.0)
    a.zero_grad()
    assert a.grad is None


def test_deep_chain_no_recursion_limit():
    a = parameter(np.array(1.0))
    x = a
    for _ in range(5000):
        x = ad.add(x, Tensor(np.array(0.0)))

    x.backward()

    assert_allclose(a.grad, 1.0)


def test_constants_get_no_grad():
    a = parameter(np.ones(2))
    c = Tensor(np.ones(2))

    ad.sum(ad.mul(a, c)).backward()

    assert c.grad is None
    assert_equal(a.grad, [1.0, 1.0])


def test_detach():
    a = parameter(np.ones(2))
    d = ad.mul(a, a).detach()

    assert not d.requires_grad
    assert d.is_leaf


def test_hypot_subgradient_at_zero():
    re = parameter(np.zeros(2))
    im = parameter(np.zeros(2))

    ad.sum(ad.hypot(re, im)).backward()

    assert_equal(re.grad, 0.0)
    assert_equal(im.grad, 0.0)


def test_max_abs_first_argmax():
    x = parameter(np.array([1.0, -3.0, 3.0, 0.5]))

    out = ad.max_abs(x)
    out.backward()

    assert out.item() == 3.0
    assert_equal(x.grad, [0.0, -1.0, 0.0, 0.0])


def test_repeat_then_mean_is_identity():
    x = RNG.standard_normal((2, 1, 7))

    out = ad.mean_time(ad.repeat_time(Tensor(x), 13))

    assert_allclose(out.data, x, rtol=0, atol=1e-12)


def test_repeat_time_shape_errors():
    with pytest.raises(ShapeError):
        ad.repeat_time(Tensor(np.ones((2, 3, 4))), 5)
    with pytest.raises(ShapeError):
        ad.repeat_time(Tensor(np.ones((2, 1, 4))), 0)


def test_check_finite():
    ad.check_finite(Tensor(np.ones(3)), 'ones')

    with pytest.raises(DivergenceError) as err:
        ad.check_finite(Tensor(np.array([1.0, np.nan])), 'L_w', step=17)

    assert err.value.step == 17
    assert 'step 17' in str(err.value)
    assert 'L_w' in str(err.value)


def test_divergence_is_arithmetic_error():
    assert issubclass(DivergenceError, ArithmeticError)
    assert issubclass(ShapeError, ValueError)
