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
"""Adam optimiser and finite-difference gradient checking"""
from collections import OrderedDict

import numpy as np

from . import logger
from .autodiff import Tensor, DivergenceError, parameter


class AdamState(object):
    """Moments and step counter for bias-corrected Adam

    Parameters
    ----------
    lr : float
    beta1, beta2 : float
    eps : float

    Attributes
    ----------
    t : int
      number of steps taken
    m, v : OrderedDict
      first and second moment per parameter name, created lazily
    """
    def __init__(self, lr=2e-5, beta1=0.9, beta2=0.98, eps=1e-9):
        if lr <= 0:
            raise ValueError("Adam learning rate must be positive, got {}".format(lr))
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1), got {} and {}".format(beta1, beta2))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = OrderedDict()
        self.v = OrderedDict()

    @property
    def hyper(self):
        return OrderedDict([('lr', self.lr), ('beta1', self.beta1),
                            ('beta2', self.beta2), ('eps', self.eps)])

    def __repr__(self):
        return "<AdamState t={} lr={} betas=({}, {}) eps={}>".format(
            self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state, step=None):
    """Apply one Adam update in place

    Parameters
    ----------
    params : mapping of name -> Tensor
      updated in place
    grads : mapping of name -> numpy array
      missing names are treated as zero gradient
    state : AdamState
      moments and step counter, updated in place
    step : int, optional
      training step, reported if the gradients diverged

    Returns
    -------
    state : AdamState

    Raises
    ------
    DivergenceError
      if any gradient is NaN or infinite; no parameter is touched
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError("Gradient for unknown parameter '{}'".format(name))
        if np.shape(g) != params[name].shape:
            raise ValueError("Gradient shape {} does not match parameter '{}' of shape {}"
                             "".format(np.shape(g), name, params[name].shape))
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient for parameter '{}'".format(name), step=step)

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1 - b1 ** state.t
    correction2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)

    return state


def collect_grads(params):
    """Gradients left by backward, keyed like `params`"""
    return OrderedDict((name, p.grad) for name, p in params.items() if p.grad is not None)


def zero_grads(params):
    for p in params.values():
        p.zero_grad()


def grad_check(fn, inputs, n_samples=16, step=1e-5, seed=0, floor=1e-6):
    """Compare backward gradients with central differences

    Parameters
    ----------
    fn : callable
      takes one Tensor per input and returns a single-element Tensor
    inputs : list of numpy arrays
      float64 evaluation point
    n_samples : int, optional
      coordinates sampled per input
    step : float, optional
      finite-difference step
    seed : int, optional
      selects the sampled coordinates
    floor : float, optional
      lower bound on the relative-error denominator

    Returns
    -------
    max_rel_err : float
      largest |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    inputs = [np.array(a) for a in inputs]
    for a in inputs:
        if a.dtype != np.float64:
            raise ValueError("grad_check needs float64 inputs, got {}".format(a.dtype))

    leaves = [parameter(a) for a in inputs]
    fn(*leaves).backward()

    def evaluate():
        return float(fn(*[Tensor(a) for a in inputs]).item())

    rng = np.random.default_rng(seed)
    worst = 0.0
    for a, leaf in zip(inputs, leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(a)
        coords = rng.choice(a.size, size=min(n_samples, a.size), replace=False)
        for i in coords:
            orig = a.flat[i]
            a.flat[i] = orig + step
            f_plus = evaluate()
            a.flat[i] = orig - step
            f_minus = evaluate()
            a.flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            exact = analytic.flat[i]
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, err)

    logger.debug("grad_check over {} input(s): max relative error {:.3e}".format(len(inputs), worst))
    return worst
