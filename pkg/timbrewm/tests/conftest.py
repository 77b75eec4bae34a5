import os

import numpy as np
import pytest

import timbrewm as twm


DATA_DIR = os.path.join(os.path.dirname(twm.__file__), 'data')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run desk-scale training and evaluation tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale runs, only with --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow', default=False):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def in_tmpdir(tmp_path):
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        yield
    finally:
        os.chdir(cwd)


@pytest.fixture
def tiny_arch():
    # 64-point STFT at 8 kHz keeps every network small enough for unit tests
    return twm.Architecture(wm_length=4, hidden_channels=2, carrier_blocks=1, embedder_blocks=2,
                            extractor_blocks=2, disc_channels=(2, 2), n_fft=64, hop=16, win_len=64,
                            sample_rate=8000, n_mels=16)


@pytest.fixture
def tiny_params(tiny_arch):
    return twm.init_params(tiny_arch, seed=3)


@pytest.fixture
def tiny_params64(tiny_arch):
    return twm.init_params(tiny_arch, seed=3, dtype=np.float64)


@pytest.fixture
def tiny_clip(tiny_arch):
    return twm.synth_test_signal(11, 0.05, tiny_arch.sample_rate)


@pytest.fixture
def tiny_clips(tiny_arch):
    return [twm.synth_test_signal(100 + i, 0.05, tiny_arch.sample_rate) for i in range(3)]


@pytest.fixture
def tiny_config(tiny_arch):
    return twm.TrainConfig(seed=1, clip_seconds=0.05, batch_size=2, steps=2, n_clips=4,
                           gl_train_iters=1, wm_length=tiny_arch.wm_length, arch=tiny_arch)


@pytest.fixture
def clip():
    return twm.synth_test_signal(7, 1.0, 22050)


@pytest.fixture
def settings_file():
    return os.path.join(DATA_DIR, 'params.yaml')
