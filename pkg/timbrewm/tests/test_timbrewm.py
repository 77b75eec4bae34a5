"""
Import test and desk-scale regression runs for the timbrewm package.

The slow tests train the default model and the distortion-blind model once
per module (CPU, tens of minutes each) and only run with --runslow.
"""
import sys
import time

import pytest

import timbrewm as twm
from timbrewm import evaluate
from timbrewm.distortion import DistortionSpec


def test_timbrewm_imported():
    """Sample test, will always pass so long as import statement worked"""
    assert "timbrewm" in sys.modules


@pytest.fixture(scope='module')
def trained_run():
    start = time.perf_counter()
    result = twm.train(twm.TrainConfig(), progress=False)
    return result, time.perf_counter() - start


@pytest.fixture(scope='module')
def trained(trained_run):
    return trained_run[0].params


@pytest.fixture(scope='module')
def trained_blind():
    return twm.train(twm.TrainConfig(use_distortion_layer=False), progress=False).params


@pytest.fixture(scope='module')
def held_out():
    return evaluate.make_test_set(n_clips=32, seed=0)


@pytest.mark.slow
def test_regression(trained, held_out):
    rows = evaluate.robustness_table(trained, held_out, [DistortionSpec('amplitude_scale', {'p': p})
                                                         for p in (0.2, 0.4, 0.6, 0.8)])
    full, _ = evaluate.dbwm_comparison(trained, trained, held_out)

    assert full.clean_acc >= 0.99
    assert full.dp_acc >= 0.90
    assert full.snr_db >= 20.0
    for row in rows:
        assert row.acc >= 0.95


@pytest.mark.slow
def test_default_run_fits_budget(trained_run):
    result, seconds = trained_run

    assert result.step == 2000
    assert seconds < 1800.0
    assert result.history.L_total[-100:].mean() < result.history.L_total[:100].mean()


@pytest.mark.slow
def test_training_is_reproducible(tmp_path):
    cfg = twm.TrainConfig(steps=20)
    data = []
    for i in range(2):
        result = twm.train(cfg, progress=False)
        path = str(tmp_path / 'run{}.twm'.format(i))
        twm.save_checkpoint(path, result.params, result.adam, result.step)
        with open(path, 'rb') as f:
            data.append(f.read())

    assert data[0] == data[1]


@pytest.mark.slow
def test_crop_robustness(trained, held_out):
    rows = evaluate.crop_curve(trained, held_out, [0.5, 0.9])

    for row in rows:
        assert row.acc >= (0.95 if row.ratio == 0.5 else 0.90), row


@pytest.mark.slow
def test_distortion_layer_ablation(trained, trained_blind, held_out):
    full, blind = evaluate.dbwm_comparison(trained, trained_blind, held_out)

    assert full.dp_acc - blind.dp_acc >= 0.15


@pytest.mark.slow
def test_detection(trained, held_out):
    report = evaluate.detection_study(trained, held_out)

    assert report.marked_rate == 1.0
    assert report.clean_rate == 0.0
    assert abs(report.clean_segment_acc - 0.5) <= 0.1


@pytest.mark.slow
def test_overwrite(trained, held_out):
    report = evaluate.overwrite_eval(trained, held_out)

    assert report.wm2_acc >= 0.9
