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
"""Quality and recovery metrics"""
from collections import namedtuple, OrderedDict
import math

import numpy as np


class MetricReport(namedtuple('MetricReport', ['snr_db', 'acc', 'aux'])):
    """SNR and bit accuracy of one evaluation, plus named extras

    Attributes
    ----------
    snr_db : float
      math.inf when the signals were identical
    acc : float
      fraction of bits recovered, in [0, 1]
    aux : OrderedDict
      further named values
    """
    __slots__ = ()

    def __new__(cls, snr_db, acc, aux=None):
        if not 0.0 <= acc <= 1.0:
            raise ValueError("accuracy must lie in [0, 1], got {}".format(acc))
        return super(MetricReport, cls).__new__(cls, float(snr_db), float(acc),
                                                OrderedDict(aux or ()))


def _samples(x):
    return np.asarray(getattr(x, 'samples', x), dtype=np.float64)


def snr(reference, test):
    """Signal-to-noise ratio of `test` against `reference` in dB

    Parameters
    ----------
    reference, test : AudioClip or array
      equal lengths

    Returns
    -------
    snr_db : float
      10 log10(sum(ref^2) / sum((ref - test)^2)); math.inf when identical
    """
    ref = _samples(reference)
    out = _samples(test)
    if ref.shape != out.shape:
        raise ValueError("SNR needs equal lengths, got {} and {}".format(ref.shape[0], out.shape[0]))
    power = np.sum(ref * ref)
    if power == 0:
        raise ValueError("SNR is undefined for an all-zero reference")
    diff = ref - out
    noise = np.sum(diff * diff)
    if noise == 0:
        return math.inf
    return float(10 * np.log10(power / noise))


def _bits(x):
    return np.asarray(getattr(x, 'bits', x)).astype(np.int64)


def bit_acc(truth, decoded):
    """Fraction of matching bits"""
    a = _bits(truth)
    b = _bits(decoded)
    if a.shape != b.shape:
        raise ValueError("Watermarks have different lengths: {} and {}".format(a.size, b.size))
    if a.size == 0:
        raise ValueError("Cannot score empty watermarks")
    return float(np.mean(a == b))


def spectral_convergence(target_mag, estimate_mag):
    """||target - estimate||_F / ||target||_F"""
    target = np.asarray(target_mag, dtype=np.float64)
    estimate = np.asarray(estimate_mag, dtype=np.float64)
    if target.shape != estimate.shape:
        raise ValueError("Spectral convergence needs equal shapes, got {} and {}"
                         "".format(target.shape, estimate.shape))
    norm = np.linalg.norm(target)
    if norm == 0:
        raise ValueError("Spectral convergence is undefined for an all-zero target")
    return float(np.linalg.norm(target - estimate) / norm)


def format_db(value):
    """Render an SNR for tables, 'inf' for the identical-signal sentinel"""
    if math.isinf(value) and value > 0:
        return 'inf'
    if math.isnan(value):
        return 'nan'
    return '{:.4f}'.format(value)
