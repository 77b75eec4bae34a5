"""Tests for reading, writing and resampling audio"""
import struct

import numpy as np
import pytest
from numpy.testing import assert_almost_equal, assert_equal
from scipy.io import wavfile

import timbrewm as twm
from timbrewm import audio_io


def _riff(fmt_tag=1, channels=1, rate=8000, bits=16, data=b'\x00\x00' * 4, magic=b'RIFF', form=b'WAVE'):
    block_align = channels * bits // 8
    fmt = struct.pack('<HHIIHH', fmt_tag, channels, rate, rate * block_align, block_align, bits)
    body = form + b'fmt ' + struct.pack('<I', len(fmt)) + fmt + b'data' + struct.pack('<I', len(data)) + data
    return magic + struct.pack('<I', len(body)) + body


def test_read_scaling(in_tmpdir):
    wavfile.write('half.wav', 8000, np.array([16384, -32768, 0], dtype=np.int16))

    c = twm.read_wav('half.wav')

    assert c.sample_rate == 8000
    assert_almost_equal(c.samples, [0.5, -1.0, 0.0])


def test_read_stereo_downmix(in_tmpdir):
    frames = np.array([[int(0.4 * 32768), int(0.8 * 32768)]], dtype=np.int16)
    wavfile.write('stereo.wav', 8000, frames)

    c = twm.read_wav('stereo.wav')

    assert c.samples.shape == (1,)
    assert_almost_equal(c.samples[0], 0.6, decimal=4)


def test_missing_file(in_tmpdir):
    with pytest.raises(FileNotFoundError):
        twm.read_wav('nothere.wav')


@pytest.mark.parametrize('raw,err', [
    (_riff(magic=b'RIFX'), audio_io.WavContainerError),
    (_riff(form=b'AVI '), audio_io.WavContainerError),
    (_riff(fmt_tag=3, bits=32, data=b'\x00' * 16), audio_io.WavEncodingError),
    (_riff(bits=8, data=b'\x80' * 4), audio_io.WavEncodingError),
    (_riff(channels=3, data=b'\x00' * 12), audio_io.WavEncodingError),
    (b'RIFF\x00', audio_io.WavTruncatedError),
    (_riff()[:30], audio_io.WavTruncatedError),
])
def test_read_errors(in_tmpdir, raw, err):
    with open('bad.wav', 'wb') as f:
        f.write(raw)

    with pytest.raises(err):
        twm.read_wav('bad.wav')


def test_read_data_chunk_past_end(in_tmpdir):
    raw = _riff(data=b'\x01\x00' * 4)
    # data size field follows the 36-byte RIFF and 'fmt ' headers
    raw = raw[:40] + struct.pack('<I', 200) + raw[44:]
    with open('short.wav', 'wb') as f:
        f.write(raw)

    with pytest.raises(audio_io.WavTruncatedError, match='declares 200 bytes but the file holds 8'):
        twm.read_wav('short.wav')


def test_read_data_before_fmt(in_tmpdir):
    with open('bad.wav', 'wb') as f:
        f.write(b'RIFF' + struct.pack('<I', 16) + b'WAVEdata' + struct.pack('<I', 4) + b'\x00' * 4)

    with pytest.raises(audio_io.WavContainerError):
        twm.read_wav('bad.wav')


def test_read_errors_are_ioerrors(in_tmpdir):
    with open('bad.wav', 'wb') as f:
        f.write(_riff(magic=b'RIFX'))

    with pytest.raises(IOError):
        twm.read_wav('bad.wav')


def test_write_clamps(in_tmpdir):
    twm.write_wav(twm.AudioClip([1.5, 0.0, -2.0, 0.5], 8000), 'out.wav')

    rate, data = wavfile.read('out.wav')

    assert rate == 8000
    assert data.dtype == np.int16
    assert_equal(data, [32767, 0, -32767, 16384])


def test_write_unwritable(tmp_path):
    with pytest.raises(audio_io.WavWriteError):
        twm.write_wav(twm.AudioClip([0.0], 8000), str(tmp_path / 'missing' / 'out.wav'))


def test_round_trip_sine(in_tmpdir):
    t = np.arange(22050) / 22050.
    c = twm.AudioClip(0.9 * np.sin(2 * np.pi * 440 * t), 22050)

    twm.write_wav(c, 'sine.wav')
    back = twm.read_wav('sine.wav')

    assert back.sample_rate == 22050
    assert np.max(np.abs(back.samples - c.samples)) <= 1.0 / 32768 + 1e-12


@pytest.mark.parametrize('samples', [[np.nan], [[0.0, 1.0]], [np.inf, 0.0]])
def test_clip_validation(samples):
    with pytest.raises(ValueError):
        twm.AudioClip(samples, 8000)


def test_clip_rate_validation():
    with pytest.raises(ValueError):
        twm.AudioClip([0.0], 0)


def test_empty_clip_allowed():
    c = twm.AudioClip([], 8000)

    assert c.n_samples == 0
    assert c.duration == 0.0


def test_resample_identity(clip):
    out = twm.resample(clip, 22050)

    assert_equal(out.samples, clip.samples)
    assert out.samples is not clip.samples


def test_resample_length(clip):
    assert twm.resample(clip, 11025).n_samples == 11025
    assert twm.resample(clip, 16000).n_samples == 16000


def test_resample_empty():
    out = twm.resample(twm.AudioClip([], 22050), 16000)

    assert out.n_samples == 0
    assert out.sample_rate == 16000


def test_resample_bad_rate(clip):
    with pytest.raises(ValueError):
        twm.resample(clip, 0)


def test_resample_round_trip_snr():
    t = np.arange(22050) / 22050.
    c = twm.AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t), 22050)

    back = twm.resample(twm.resample(c, 16000), 22050)

    assert back.n_samples == c.n_samples
    assert twm.metrics.snr(c, back) >= 40.0


def test_synth_deterministic():
    a = twm.synth_test_signal(7, 1.0, 22050)
    b = twm.synth_test_signal(7, 1.0, 22050)

    assert_equal(a.samples, b.samples)
    assert a.n_samples == 22050


def test_synth_seed_sensitive():
    a = twm.synth_test_signal(7, 1.0, 22050)
    b = twm.synth_test_signal(8, 1.0, 22050)

    assert not np.array_equal(a.samples, b.samples)


@pytest.mark.parametrize('seed', [0, 1, 7, 1234])
def test_synth_peak(seed):
    c = twm.synth_test_signal(seed, 0.5, 16000)

    assert abs(np.max(np.abs(c.samples)) - 0.8) < 1e-9


def test_synth_bad_duration():
    with pytest.raises(ValueError):
        twm.synth_test_signal(0, 0.0)
