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
"""Network layers built on :mod:`timbrewm.autodiff`

Feature maps are C x T x H tensors (channels, frames, frequency bins).
Blocks take a mapping of local parameter names to tensors, as produced by
:meth:`timbrewm.model.ModelParams.group`.
"""
from collections import OrderedDict

import numpy as np
from scipy import special

from .autodiff import ShapeError, _result, leaky_relu, add

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5

PAD_MODES = ('zeros', 'time_edge')


def _pad_input(x, ph, pw, pad_mode):
    if pad_mode == 'time_edge':
        x = np.pad(x, ((0, 0), (ph, ph), (0, 0)), mode='edge')
        return np.pad(x, ((0, 0), (0, 0), (pw, pw)), mode='constant')
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode='constant')


def _fold_padding(gxp, n_frames, n_bins, ph, pw, pad_mode):
    """Map a gradient on the padded input back onto the input"""
    gx = gxp[:, ph:ph + n_frames, pw:pw + n_bins].copy()
    if pad_mode == 'time_edge' and ph > 0:
        gx[:, 0] += gxp[:, :ph, pw:pw + n_bins].sum(axis=1)
        gx[:, -1] += gxp[:, ph + n_frames:, pw:pw + n_bins].sum(axis=1)
    return gx


def _im2col(xp, kh, kw, n_frames, n_bins):
    """(C * kh * kw) x (T * H) matrix of the kernel windows of a padded input

    Rows are ordered (channel, kernel row, kernel column), matching
    ``weight.reshape(C_out, -1)``.
    """
    c = xp.shape[0]
    if kh == 1 and kw == 1:
        return xp.reshape(c, n_frames * n_bins)
    cols = np.empty((c, kh, kw, n_frames, n_bins), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + n_frames, j:j + n_bins]
    return cols.reshape(c * kh * kw, n_frames * n_bins)


def _col2im(gcols, c, kh, kw, n_frames, n_bins):
    """Scatter-add window gradients back onto the padded input"""
    gcols = gcols.reshape(c, kh, kw, n_frames, n_bins)
    gxp = np.zeros((c, n_frames + kh - 1, n_bins + kw - 1), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + n_frames, j:j + n_bins] += gcols[:, i, j]
    return gxp


def _check_conv(x, weight, bias, opname):
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError("{} needs a C x T x H input and a 4-D kernel, got {} and {}"
                         "".format(opname, x.shape, weight.shape))
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError("{}: input has {} channels, kernel expects {}".format(opname, x.shape[0], c_in))
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("{} needs odd kernel sizes, got {}x{}".format(opname, kh, kw))
    if bias.shape != (c_out,):
        raise ShapeError("{}: bias shape {} does not match {} output channels".format(opname, bias.shape, c_out))
    return weight.shape


def _check_pad_mode(pad_mode):
    if pad_mode not in PAD_MODES:
        raise ValueError("Unknown pad_mode '{}', choose from {}".format(pad_mode, PAD_MODES))


def conv2d(x, weight, bias, pad_mode='zeros'):
    """Same-size 2-D cross-correlation, stride 1

    Parameters
    ----------
    x : Tensor
      input, C_in x T x H
    weight : Tensor
      C_out x C_in x k x k, k odd
    bias : Tensor
      C_out
    pad_mode : {'zeros', 'time_edge'}
      'zeros' pads both axes with zeros; 'time_edge' replicates the first
      and last frame along time and zero pads frequency

    Returns
    -------
    out : Tensor
      C_out x T x H
    """
    _check_pad_mode(pad_mode)
    c_out, c_in, kh, kw = _check_conv(x, weight, bias, 'conv2d')
    n_frames, n_bins = x.shape[1:]
    ph, pw = kh // 2, kw // 2
    cols = _im2col(_pad_input(x.data, ph, pw, pad_mode), kh, kw, n_frames, n_bins)
    w2 = weight.data.reshape(c_out, -1)
    out = w2 @ cols
    out += bias.data[:, None]

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gxp = _col2im(w2.T @ g2, c_in, kh, kw, n_frames, n_bins)
            gx = _fold_padding(gxp, n_frames, n_bins, ph, pw, pad_mode)
        return gx, gw, gb

    return _result(out.reshape(c_out, n_frames, n_bins), (x, weight, bias), backward)


def gated_conv(x, weight_a, bias_a, weight_b, bias_b, pad_mode='zeros'):
    """conv_a(x) * sigmoid(conv_b(x)) as a single node

    Both convolutions read the same windows, so they run as one matrix
    product over one im2col matrix.

    Parameters
    ----------
    x : Tensor
      C_in x T x H
    weight_a, weight_b : Tensor
      C_out x C_in x k x k, same shape
    bias_a, bias_b : Tensor
      C_out
    pad_mode : {'zeros', 'time_edge'}

    Returns
    -------
    out : Tensor
      C_out x T x H
    """
    _check_pad_mode(pad_mode)
    c_out, c_in, kh, kw = _check_conv(x, weight_a, bias_a, 'gated_conv')
    if weight_b.shape != weight_a.shape or bias_b.shape != bias_a.shape:
        raise ShapeError("gated_conv: gate kernel {} does not match {}".format(weight_b.shape, weight_a.shape))
    n_frames, n_bins = x.shape[1:]
    ph, pw = kh // 2, kw // 2
    cols = _im2col(_pad_input(x.data, ph, pw, pad_mode), kh, kw, n_frames, n_bins)
    w2 = np.concatenate([weight_a.data.reshape(c_out, -1), weight_b.data.reshape(c_out, -1)])
    z = w2 @ cols
    z += np.concatenate([bias_a.data, bias_b.data])[:, None]
    a = z[:c_out]
    s = special.expit(z[c_out:])

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gz = np.concatenate([g2 * s, g2 * a * s * (1 - s)])
        gx = gwa = gba = gwb = gbb = None
        if weight_a.requires_grad or weight_b.requires_grad:
            gw = gz @ cols.T
            gwa = gw[:c_out].reshape(weight_a.shape)
            gwb = gw[c_out:].reshape(weight_b.shape)
        if bias_a.requires_grad or bias_b.requires_grad:
            gb = gz.sum(axis=1)
            gba, gbb = gb[:c_out], gb[c_out:]
        if x.requires_grad:
            gxp = _col2im(w2.T @ gz, c_in, kh, kw, n_frames, n_bins)
            gx = _fold_padding(gxp, n_frames, n_bins, ph, pw, pad_mode)
        return gx, gwa, gba, gwb, gbb

    out = (a * s).reshape(c_out, n_frames, n_bins)
    return _result(out, (x, weight_a, bias_a, weight_b, bias_b), backward)


def linear(x, weight, bias):
    """Affine map on the last axis

    Parameters
    ----------
    x : Tensor
      ... x d_in
    weight : Tensor
      d_out x d_in
    bias : Tensor
      d_out
    """
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError("linear: input last dimension {} does not match weight {}"
                         "".format(x.shape[-1], weight.shape))
    if bias.shape != (d_out,):
        raise ShapeError("linear: bias shape {} does not match {} outputs".format(bias.shape, d_out))
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out = x2 @ weight.data.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data).reshape(x.shape)
        return gx, g2.T @ x2, g2.sum(axis=0)

    return _result(out.reshape(lead + (d_out,)), (x, weight, bias), backward)


def instance_norm(x, gamma, beta, eps=NORM_EPS):
    """Per-channel standardisation over T x H followed by an affine map"""
    if x.ndim != 3:
        raise ShapeError("instance_norm needs a C x T x H tensor, got {}".format(x.shape))
    n = x.shape[1] * x.shape[2]
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=(1, 2), keepdims=True) + eps)
    xhat = centred * inv_std
    g_ = gamma.data[:, None, None]
    out = g_ * xhat + beta.data[:, None, None]

    def backward(g):
        gxhat = g * g_
        gx = inv_std / n * (n * gxhat
                            - gxhat.sum(axis=(1, 2), keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=(1, 2), keepdims=True))
        return gx, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    return _result(out, (x, gamma, beta), backward)


def gated_block(x, p, pad_mode='zeros'):
    """Gated convolution with a skip connection

    out = proj(x) + conv_a(x) * sigmoid(conv_b(x)), where proj is the
    identity when the channel count is unchanged and a 1x1 convolution
    otherwise.

    Parameters
    ----------
    x : Tensor
    p : mapping
      'conv_a.weight', 'conv_a.bias', 'conv_b.weight', 'conv_b.bias' and,
      when channels change, 'proj.weight', 'proj.bias'
    pad_mode : str
    """
    gated = gated_conv(x, p['conv_a.weight'], p['conv_a.bias'], p['conv_b.weight'], p['conv_b.bias'], pad_mode)
    if 'proj.weight' in p:
        skip = conv2d(x, p['proj.weight'], p['proj.bias'], pad_mode)
    elif x.shape[0] == gated.shape[0]:
        skip = x
    else:
        raise ShapeError("gated_block changes channels {} -> {} but has no projection"
                         "".format(x.shape[0], gated.shape[0]))
    return add(skip, gated)


def relu_block(x, p, pad_mode='zeros'):
    """Convolution, instance normalisation, LeakyReLU"""
    h = conv2d(x, p['conv.weight'], p['conv.bias'], pad_mode)
    h = instance_norm(h, p['norm.weight'], p['norm.bias'])
    return leaky_relu(h, LEAKY_SLOPE)


# parameter initialisation, uniform in +-1/sqrt(fan_in)


def init_conv(rng, c_out, c_in, k, dtype=np.float32):
    bound = 1.0 / np.sqrt(c_in * k * k)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)
    b = rng.uniform(-bound, bound, size=c_out).astype(dtype)
    return w, b


def init_linear(rng, d_out, d_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype)
    b = rng.uniform(-bound, bound, size=d_out).astype(dtype)
    return w, b


def init_gated_block(rng, c_in, c_out, k=3, dtype=np.float32):
    """Arrays for one gated block, keyed by local parameter name"""
    p = OrderedDict()
    p['conv_a.weight'], p['conv_a.bias'] = init_conv(rng, c_out, c_in, k, dtype)
    p['conv_b.weight'], p['conv_b.bias'] = init_conv(rng, c_out, c_in, k, dtype)
    if c_in != c_out:
        p['proj.weight'], p['proj.bias'] = init_conv(rng, c_out, c_in, 1, dtype)
    return p


def init_relu_block(rng, c_in, c_out, k=3, dtype=np.float32):
    p = OrderedDict()
    p['conv.weight'], p['conv.bias'] = init_conv(rng, c_out, c_in, k, dtype)
    p['norm.weight'] = np.ones(c_out, dtype=dtype)
    p['norm.bias'] = np.zeros(c_out, dtype=dtype)
    return p
