#    timbrewm - timbre watermarking for speech against voice cloning
#    Copyright (C) 2026  the timbrewm developers
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU General Public License for more details.
#
#    You should have received a copy of the GNU General Public License
#    along with this program.  If not, see <http://www.gnu.org/licenses/>.
"""Reverse-mode automatic differentiation over numpy arrays

A :class:`Tensor` wraps an array and remembers the operation that produced
it.  Every operation in this module returns a new Tensor whose backward
closure maps the output gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and leaves the accumulated gradient in ``.grad`` of every leaf that
has ``requires_grad`` set.

There is no implicit broadcasting: elementwise operations need identical
shapes, and python scalars are expanded to the other operand's shape.
"""
import numpy as np
from scipy import special


class ShapeError(ValueError):
    """Operands have incompatible shapes"""


class DivergenceError(ArithmeticError):
    """A loss or gradient became NaN or infinite

    Parameters
    ----------
    message : str
    step : int, optional
      training step at which the divergence was detected
    """
    def __init__(self, message, step=None):
        if step is not None:
            message = "step {}: {}".format(step, message)
        super(DivergenceError, self).__init__(message)
        self.step = step


class Tensor(object):
    """Array node in a differentiation graph

    Parameters
    ----------
    data : array_like
      values, integer input is promoted to float64
    requires_grad : bool, optional
      leaves with this flag receive ``.grad`` after backward
    parents : tuple of Tensor, optional
    backward : callable, optional
      maps output gradient to a tuple of parent gradients (None entries
      for parents that need no gradient)
    name : str, optional
    """
    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        return "<Tensor{} shape={} dtype={}{}>".format(
            '' if self.name is None else ' ' + self.name,
            self.shape, self.dtype, ' requires_grad' if self.requires_grad else '')

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        """Same values, cut from the graph"""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this node into every leaf below it

        Parameters
        ----------
        grad : numpy array, optional
          seed gradient, required unless this tensor has a single element
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a seed gradient needs a single-element "
                                 "tensor, got shape {}".format(self.shape))
            grad = np.ones_like(self.data)
        elif np.shape(grad) != self.shape:
            raise ShapeError("seed gradient shape {} does not match tensor shape {}"
                             "".format(np.shape(grad), self.shape))
        if not self.requires_grad:
            return

        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root):
    """Nodes reachable through requires_grad parents, parents first"""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(data, parents, backward):
    """Wrap an op output, attaching backward only when a parent needs it"""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(data)


def as_tensor(x, like=None):
    """Coerce arrays and python scalars to Tensor

    Scalars are expanded to the shape and dtype of `like` when given.
    """
    if isinstance(x, Tensor):
        return x
    if like is not None and np.ndim(x) == 0:
        return Tensor(np.full(like.shape, x, dtype=like.dtype))
    if like is not None:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def parameter(data, name=None):
    """Leaf tensor that collects gradients"""
    return Tensor(data, requires_grad=True, name=name)


def _check_same_shape(a, b, opname):
    if a.shape != b.shape:
        raise ShapeError("{}: shapes {} and {} differ (no implicit broadcasting)"
                         "".format(opname, a.shape, b.shape))


def _binary_operands(a, b, opname):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    _check_same_shape(a, b, opname)
    return a, b


def check_finite(t, what, step=None):
    """Raise DivergenceError when `t` holds NaN or Inf"""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise DivergenceError("non-finite values in {}".format(what), step=step)


# elementwise arithmetic


def add(a, b):
    a, b = _binary_operands(a, b, 'add')
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def add_n(tensors):
    """Sum of a non-empty list of same-shape tensors"""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("add_n needs at least one tensor")
    for t in tensors[1:]:
        _check_same_shape(tensors[0], t, 'add_n')
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        data = data + t.data
    return _result(data, tensors, lambda g: tuple(g for _ in tensors))


def sub(a, b):
    a, b = _binary_operands(a, b, 'sub')
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _binary_operands(a, b, 'mul')

    def backward(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _binary_operands(a, b, 'div')
    out = a.data / b.data

    def backward(g):
        gb = g / b.data
        return gb, -gb * out

    return _result(out, (a, b), backward)


def scale(x, s):
    """Multiply every element of `x` by the single-element tensor `s`"""
    s = as_tensor(s)
    if s.size != 1:
        raise ShapeError("scale needs a single-element factor, got shape {}".format(s.shape))
    factor = s.data.reshape(())

    def backward(g):
        gs = np.sum(g * x.data).astype(s.dtype).reshape(s.shape)
        return g * factor, gs

    return _result(x.data * factor, (x, s), backward)


def reciprocal(x):
    out = 1.0 / x.data
    return _result(out, (x,), lambda g: (-g * out * out,))


def square(x):
    return _result(x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def sqrt(x):
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (0.5 * g / out,))


def exp(x):
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def hypot(re, im):
    """Elementwise sqrt(re**2 + im**2), subgradient 0 where both vanish"""
    _check_same_shape(re, im, 'hypot')
    out = np.hypot(re.data, im.data)

    def backward(g):
        safe = np.where(out > 0, out, 1)
        w = np.where(out > 0, g / safe, 0)
        return w * re.data, w * im.data

    return _result(out, (re, im), backward)


def matmul(a, b):
    """Product of two 2-D tensors"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: cannot multiply shapes {} and {}".format(a.shape, b.shape))

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


# activations


def sigmoid(x):
    out = special.expit(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1 - out * out),))


def leaky_relu(x, alpha=0.2):
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return _result(x.data * slope, (x,), lambda g: (g * slope,))


def clamp_min(x, lo=0.0):
    """max(x, lo), gradient passes where x > lo"""
    mask = x.data > lo
    return _result(np.where(mask, x.data, lo).astype(x.dtype), (x,), lambda g: (g * mask,))


def clip(x, lo, hi):
    mask = (x.data > lo) & (x.data < hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


# reductions


def sum(x):
    """Sum of all elements as a 0-d tensor"""
    return _result(np.sum(x.data), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean(x):
    n = x.size
    return _result(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def max_abs(x):
    """Largest absolute value; subgradient goes to the first argmax only"""
    flat = np.abs(x.data).ravel()
    i = int(np.argmax(flat))
    sign = np.sign(x.data.ravel()[i])

    def backward(g):
        gx = np.zeros(x.size, dtype=x.dtype)
        gx[i] = g * sign
        return gx.reshape(x.shape),

    return _result(flat[i], (x,), backward)


# shape operations


def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x, idx):
    """Gather elements of a 1-D tensor at integer positions `idx` (any shape)"""
    if x.ndim != 1:
        raise ShapeError("take needs a 1-D tensor, got shape {}".format(x.shape))
    idx = np.asarray(idx)

    def backward(g):
        gx = np.bincount(idx.ravel(), weights=g.ravel(), minlength=x.size)
        return gx.astype(x.dtype),

    return _result(x.data[idx], (x,), backward)


def scatter_add(values, idx, n):
    """Sum `values` into a length-n vector at positions `idx` (same shape)"""
    idx = np.asarray(idx)
    if idx.shape != values.shape:
        raise ShapeError("scatter_add: index shape {} does not match values shape {}"
                         "".format(idx.shape, values.shape))
    out = np.bincount(idx.ravel(), weights=values.data.ravel(), minlength=n).astype(values.dtype)
    return _result(out, (values,), lambda g: (g[idx],))


def concat_channels(tensors):
    """Concatenate C_i x T x H tensors along the channel axis"""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    rest = tensors[0].shape[1:]
    for t in tensors:
        if t.ndim != 3 or t.shape[1:] != rest:
            raise ShapeError("concat_channels: shape {} incompatible with trailing dims {}"
                             "".format(t.shape, rest))
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=0), tensors, backward)


def repeat_time(x, n_frames):
    """Tile a C x 1 x H tensor to C x T x H"""
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError("repeat_time needs a C x 1 x H tensor, got shape {}".format(x.shape))
    if n_frames < 1:
        raise ShapeError("repeat_time needs at least one frame, got {}".format(n_frames))
    out = np.repeat(x.data, n_frames, axis=1)
    return _result(out, (x,), lambda g: (g.sum(axis=1, keepdims=True),))


def mean_time(x):
    """Average a C x T x H tensor over frames to C x 1 x H"""
    if x.ndim != 3:
        raise ShapeError("mean_time needs a C x T x H tensor, got shape {}".format(x.shape))
    n_frames = x.shape[1]

    def backward(g):
        return np.repeat(g / n_frames, n_frames, axis=1),

    return _result(x.data.mean(axis=1, keepdims=True), (x,), backward)


def avg_pool_all(x):
    """Global average over every axis but the first, C x ... -> C"""
    n_channels = x.shape[0]
    n = x.size // n_channels
    out = x.data.reshape(n_channels, -1).mean(axis=1)

    def backward(g):
        return np.repeat(g / n, n).reshape(x.shape).astype(x.dtype),

    return _result(out, (x,), backward)
