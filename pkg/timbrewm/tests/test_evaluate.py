"""Tests for the evaluation reports"""
import math

import numpy as np
import pytest
from numpy.testing import assert_equal

import timbrewm as twm
from timbrewm import evaluate
from timbrewm.distortion import DistortionSpec


def test_make_test_set():
    clips = evaluate.make_test_set(n_clips=3, seed=2, clip_seconds=0.05, sample_rate=8000)

    assert len(clips) == 3
    assert_equal(clips[1].samples, twm.synth_test_signal(10 ** 9 + 20001, 0.05, 8000).samples)
    with pytest.raises(ValueError):
        evaluate.make_test_set(n_clips=0)


def test_test_set_is_not_training_data(tiny_config):
    train = twm.trainer.load_corpus(tiny_config)
    test = evaluate.make_test_set(n_clips=4, seed=tiny_config.seed, clip_seconds=0.05, sample_rate=8000)

    for a in train:
        assert not any(np.array_equal(a.samples, b.samples) for b in test)


def test_clip_watermarks():
    a = evaluate.clip_watermark(0, 3, 64)
    b = evaluate.clip_watermark(0, 3, 64)
    c = evaluate.clip_watermark(0, 3, 64, evaluate.PURPOSE_WM2)
    d = evaluate.clip_watermark(0, 4, 64)

    assert a.to_string() == b.to_string()
    assert a.n == 64
    assert a.to_string() != c.to_string()
    assert a.to_string() != d.to_string()


def test_default_specs():
    specs = evaluate.default_robustness_specs()

    assert len(specs) == 19
    assert specs[0].label == 'resample:rate=16000'
    assert specs[2].label == 'amplitude_scale:p=0.2'
    assert specs[-1].label == 'dp_pipeline:gl_iters=32'


def test_robustness_table(tiny_params, tiny_clips):
    rows = evaluate.robustness_table(tiny_params, tiny_clips)

    assert len(rows) == 19
    assert [r.distortion for r in rows] == [s.label for s in evaluate.default_robustness_specs()]
    for row in rows:
        assert row.n_clips == 3
        assert row.error == ''
        assert 0.0 <= row.acc <= 1.0
    by_label = {r.distortion: r for r in rows}
    assert abs(by_label['amplitude_scale:p=0.2'].snr_db - 1.9382) <= 1e-3
    assert abs(by_label['amplitude_scale:p=0.8'].snr_db - 13.9790) <= 1e-3
    assert abs(by_label['gaussian_noise:snr_db=30'].snr_db - 30) <= 0.05
    assert by_label['resample:rate=8000'].snr_db == math.inf


def test_robustness_error_row(tiny_params, tiny_clips):
    specs = [DistortionSpec('low_pass', {'fc': 5000}), DistortionSpec('amplitude_scale', {'p': 0.5})]

    rows = evaluate.robustness_table(tiny_params, tiny_clips, specs)

    assert math.isnan(rows[0].acc)
    assert 'Nyquist' in rows[0].error
    assert rows[1].error == ''


def test_robustness_needs_clips(tiny_params):
    with pytest.raises(ValueError):
        evaluate.robustness_table(tiny_params, [])


def test_robustness_is_seeded(tiny_params, tiny_clips):
    specs = [DistortionSpec('gaussian_noise', {'snr_db': 20})]

    a = evaluate.robustness_table(tiny_params, tiny_clips, specs, seed=4)
    b = evaluate.robustness_table(tiny_params, tiny_clips, specs, seed=4)

    assert a == b


def test_robustness_with_dask(tiny_params, tiny_clips):
    distributed = pytest.importorskip('distributed')
    specs = [DistortionSpec('amplitude_scale', {'p': 0.5}), DistortionSpec('gaussian_noise', {'snr_db': 25})]

    with distributed.Client(processes=False, n_workers=1, threads_per_worker=1) as client:
        parallel = evaluate.robustness_table(tiny_params, tiny_clips, specs, client=client)
    serial = evaluate.robustness_table(tiny_params, tiny_clips, specs)

    assert parallel == serial


def test_crop_curve(tiny_params, tiny_clips):
    rows = evaluate.crop_curve(tiny_params, tiny_clips, [0.0, 0.5])

    assert [(r.position, r.ratio) for r in rows] == [('front', 0.0), ('front', 0.5), ('middle', 0.0),
                                                      ('middle', 0.5), ('behind', 0.0), ('behind', 0.5)]
    assert rows[0].acc == rows[2].acc == rows[4].acc
    assert all(r.n_clips == 3 for r in rows)


def test_mask_study(tiny_params, tiny_clips):
    rows = evaluate.mask_study(tiny_params, tiny_clips, width=0.25)

    assert [r.band for r in rows] == [0, 1, 2, 3]
    assert [r.start for r in rows] == [0.0, 0.25, 0.5, 0.75]
    for row in rows:
        assert 0 <= row.spec_acc <= 1
        assert 0 <= row.wave_acc <= 1
        assert np.isfinite(row.snr_db)
    with pytest.raises(ValueError):
        evaluate.mask_study(tiny_params, tiny_clips, width=0)


def test_mask_ratio_curve(tiny_params, tiny_clips):
    rows = evaluate.mask_ratio_curve(tiny_params, tiny_clips, [0.1, 1.0])

    assert [r.ratio for r in rows] == [0.1, 1.0]
    # nothing is left once the whole spectrum is zeroed
    assert abs(rows[1].snr_db) < 1e-9
    with pytest.raises(ValueError):
        evaluate.mask_ratio_curve(tiny_params, tiny_clips, [1.5])


def test_overwrite(tiny_params, tiny_clips):
    report = evaluate.overwrite_eval(tiny_params, tiny_clips)

    assert report.n_clips == 3
    assert 0 <= report.wm1_acc <= 1
    assert 0 <= report.wm2_acc <= 1
    assert np.isfinite(report.snr_db)


def test_overwrite_same_payload(tiny_params, tiny_clips):
    w = twm.WatermarkBits.from_string('0110')

    report = evaluate.overwrite_eval(tiny_params, tiny_clips, wm1=w, wm2=w)

    assert report.wm1_acc == report.wm2_acc


def test_dbwm_comparison(tiny_params, tiny_arch, tiny_clips):
    blind = twm.init_params(tiny_arch, seed=8)

    rows = evaluate.dbwm_comparison(tiny_params, blind, tiny_clips, gl_iters=2)

    assert [r.model for r in rows] == ['full', 'dbwm']
    assert all(r.n_clips == 3 for r in rows)


def test_detection_study(tiny_params, tiny_clips):
    always = evaluate.detection_study(tiny_params, tiny_clips, threshold=0.0)
    report = evaluate.detection_study(tiny_params, tiny_clips)

    assert always.marked_rate == 1.0
    assert always.clean_rate == 1.0
    assert report.n_clips == 3
    assert 0 <= report.clean_segment_acc <= 1
