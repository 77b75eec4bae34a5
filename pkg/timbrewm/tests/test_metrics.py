"""Tests for SNR, bit accuracy and spectral convergence"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import timbrewm as twm
from timbrewm import metrics


def test_snr_known_value():
    ref = np.array([1.0, -1.0, 1.0, -1.0])

    assert_allclose(metrics.snr(ref, ref * 0.9), 20.0)


def test_snr_accepts_clips(clip):
    out = twm.AudioClip(clip.samples * 0.5, clip.sample_rate)

    assert_allclose(metrics.snr(clip, out), 20 * np.log10(2.0))


def test_snr_identical_is_inf(clip):
    assert metrics.snr(clip, clip) == math.inf


def test_snr_errors():
    with pytest.raises(ValueError):
        metrics.snr(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        metrics.snr(np.zeros(3), np.ones(3))


def test_bit_acc():
    w = twm.WatermarkBits.from_string('1010')

    assert metrics.bit_acc(w, [1, 0, 1, 0]) == 1.0
    assert metrics.bit_acc(w, twm.WatermarkBits.from_string('1001')) == 0.5
    assert metrics.bit_acc(w, [0, 1, 0, 1]) == 0.0


def test_bit_acc_errors():
    with pytest.raises(ValueError):
        metrics.bit_acc([1, 0], [1, 0, 1])
    with pytest.raises(ValueError):
        metrics.bit_acc([], [])


def test_spectral_convergence():
    target = np.array([[3.0, 4.0]])

    assert metrics.spectral_convergence(target, target) == 0.0
    assert_allclose(metrics.spectral_convergence(target, np.zeros((1, 2))), 1.0)
    with pytest.raises(ValueError):
        metrics.spectral_convergence(np.zeros((1, 2)), target)
    with pytest.raises(ValueError):
        metrics.spectral_convergence(target, np.zeros((2, 1)))


def test_metric_report():
    r = metrics.MetricReport(30, 1, {'n_clips': 4})

    assert r.snr_db == 30.0
    assert r.aux['n_clips'] == 4
    with pytest.raises(ValueError):
        metrics.MetricReport(30, 1.5)


@pytest.mark.parametrize('value,text', [(math.inf, 'inf'), (float('nan'), 'nan'), (12.345678, '12.3457')])
def test_format_db(value, text):
    assert metrics.format_db(value) == text
