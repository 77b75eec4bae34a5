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
"""Reading, writing, resampling and synthesising speech clips

All clips are mono float64 arrays with a nominal range of [-1, 1].
Only 16-bit PCM WAV files are supported.
"""
from collections import namedtuple
from functools import lru_cache
from math import gcd
import os
import struct

import numpy as np
from scipy import signal
from scipy.io import wavfile

from . import logger

# asymmetric 16-bit scaling: reading divides by 2**15, writing multiplies
# by 2**15 - 1 so that +1.0 never overflows
READ_SCALE = 32768.
WRITE_SCALE = 32767.

# resampling filter spans this many samples at the lower of the two rates
TAPS_PER_PHASE = 64
KAISER_BETA = 8.0

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(IOError):
    """Base class for problems reading or writing WAV files"""


class WavContainerError(WavError):
    """File is not a RIFF/WAVE container"""


class WavEncodingError(WavError):
    """Container is fine but the sample encoding is not 16-bit PCM"""


class WavTruncatedError(WavError):
    """File ends before the header or data is complete"""


class WavWriteError(WavError):
    """Output file could not be written"""


class AudioClip(namedtuple('AudioClip', ['samples', 'sample_rate'])):
    """Mono audio signal

    Attributes
    ----------
    samples : numpy array, shape (N,)
      float64 amplitudes, finite
    sample_rate : int
      samples per second
    """
    __slots__ = ()

    def __new__(cls, samples, sample_rate):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be 1-D, got shape {}"
                             "".format(samples.shape))
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if sample_rate <= 0 or int(sample_rate) != sample_rate:
            raise ValueError("sample_rate must be a positive integer, got {}"
                             "".format(sample_rate))
        return super(AudioClip, cls).__new__(cls, samples, int(sample_rate))

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return self.n_samples / float(self.sample_rate)


def _inspect_header(path):
    """Walk the RIFF chunks up to 'data', checking the encoding and that the
    data chunk fits in the file

    Returns
    -------
    channels, sample_rate : int
    """
    with open(path, 'rb') as f:
        file_size = os.fstat(f.fileno()).st_size
        riff = f.read(12)
        if len(riff) < 12:
            raise WavTruncatedError("{}: file too short for a RIFF header".format(path))
        if riff[:4] != b'RIFF':
            raise WavContainerError("{}: not a little-endian RIFF file (magic {!r})"
                                    "".format(path, riff[:4]))
        if riff[8:12] != b'WAVE':
            raise WavContainerError("{}: RIFF form type is {!r}, not 'WAVE'"
                                    "".format(path, riff[8:12]))
        body = None
        while True:
            head = f.read(8)
            if len(head) < 8:
                raise WavTruncatedError("{}: no '{}' chunk before end of file"
                                        "".format(path, 'fmt ' if body is None else 'data'))
            chunk_id = head[:4]
            size = struct.unpack('<I', head[4:])[0]
            if chunk_id == b'fmt ':
                body = f.read(size)
                if size < 16 or len(body) < size:
                    raise WavTruncatedError("{}: 'fmt ' chunk is truncated".format(path))
                f.seek(size % 2, os.SEEK_CUR)
            elif chunk_id == b'data':
                if body is None:
                    raise WavContainerError("{}: 'data' chunk comes before 'fmt '".format(path))
                remaining = file_size - f.tell()
                if size > remaining:
                    raise WavTruncatedError("{}: data chunk declares {} bytes but the file holds {}"
                                            "".format(path, size, remaining))
                break
            else:
                # chunks are word aligned
                f.seek(size + size % 2, os.SEEK_CUR)

    fmt_tag, channels, rate, _, _, bits = struct.unpack('<HHIIHH', body[:16])
    if fmt_tag == _WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
        fmt_tag = struct.unpack('<H', body[24:26])[0]
    if fmt_tag != _WAVE_FORMAT_PCM:
        raise WavEncodingError("{}: format tag {:#06x} is not integer PCM".format(path, fmt_tag))
    if bits != 16:
        raise WavEncodingError("{}: {}-bit samples are unsupported, need 16-bit".format(path, bits))
    if channels not in (1, 2):
        raise WavEncodingError("{}: {} channels are unsupported, need 1 or 2".format(path, channels))

    return channels, rate


def read_wav(path):
    """Read a 16-bit PCM WAV file

    Stereo files are downmixed by taking the mean of both channels.

    Parameters
    ----------
    path : str
      file to read

    Returns
    -------
    clip : AudioClip
      samples scaled by 1/32768

    Raises
    ------
    FileNotFoundError
      if path does not exist
    WavContainerError, WavEncodingError, WavTruncatedError
      for malformed or unsupported files
    """
    if not os.path.exists(path):
        raise FileNotFoundError("No such WAV file: {}".format(path))

    channels, rate = _inspect_header(path)
    logger.debug("Reading {} ({} channel(s) at {} Hz)".format(path, channels, rate))
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise WavTruncatedError("{}: unreadable data chunk ({})".format(path, e))

    if data.dtype != np.int16:
        raise WavEncodingError("{}: decoded as {}, need int16".format(path, data.dtype))

    samples = data.astype(np.float64) / READ_SCALE
    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    return AudioClip(samples, rate)


def write_wav(clip, path):
    """Write a clip as mono 16-bit PCM

    Amplitudes are clipped to [-1, 1] then rounded to the nearest
    integer of x * 32767.

    Parameters
    ----------
    clip : AudioClip
    path : str
    """
    data = np.round(np.clip(clip.samples, -1.0, 1.0) * WRITE_SCALE).astype(np.int16)
    logger.debug("Writing {} samples to {}".format(data.shape[0], path))
    try:
        wavfile.write(path, clip.sample_rate, data)
    except (IOError, OSError) as e:
        raise WavWriteError("Cannot write {}: {}".format(path, e))


@lru_cache(maxsize=32)
def _resampling_filter(up, down):
    """Kaiser-windowed sinc low-pass for a polyphase up/down resampler"""
    max_rate = max(up, down)
    numtaps = TAPS_PER_PHASE * max_rate + 1
    return signal.firwin(numtaps, 1.0 / max_rate, window=('kaiser', KAISER_BETA))


def resample(clip, target_rate):
    """Polyphase windowed-sinc resampling

    The signal is extended by odd reflection before filtering so the
    ends of the clip do not see the filter's zero padding.

    Parameters
    ----------
    clip : AudioClip
    target_rate : int
      new sample rate in Hz

    Returns
    -------
    resampled : AudioClip
      length round(N * target_rate / sample_rate)
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive, got {}".format(target_rate))
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), target_rate)

    n = clip.n_samples
    n_out = int(round(n * target_rate / float(clip.sample_rate)))
    if n == 0:
        return AudioClip(np.zeros(0), target_rate)

    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    h = _resampling_filter(up, down)

    # padding must map to a whole number of output samples
    half_len = TAPS_PER_PHASE * max(up, down) / 2.
    pad = down * int(np.ceil(half_len / (up * down)))
    if n > 1:
        x = np.pad(clip.samples, pad, mode='reflect', reflect_type='odd')
    else:
        x = np.pad(clip.samples, pad, mode='edge')

    y = signal.resample_poly(x, up, down, window=h)
    offset = pad * up // down
    y = y[offset:offset + n_out]

    return AudioClip(y, target_rate)


def synth_test_signal(seed, duration_s, sample_rate=22050):
    """Deterministic speech-like test signal

    A seeded fundamental in 80-300 Hz carries 3-6 harmonics under a
    slow, syllable-rate amplitude envelope, plus low-level noise.

    Parameters
    ----------
    seed : int
    duration_s : float
      length in seconds, must be positive
    sample_rate : int, optional
      default 22050 Hz

    Returns
    -------
    clip : AudioClip
      peak amplitude exactly 0.8
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive, got {}".format(duration_s))

    rng = np.random.default_rng(seed)
    n = max(1, int(round(duration_s * sample_rate)))
    t = np.arange(n) / float(sample_rate)

    f0 = rng.uniform(80., 300.)
    n_harmonics = int(rng.integers(3, 7))
    amps = rng.uniform(0.3, 1.0, size=n_harmonics) / np.arange(1, n_harmonics + 1)
    phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)

    x = np.zeros(n)
    for k in range(n_harmonics):
        x += amps[k] * np.sin(2 * np.pi * f0 * (k + 1) * t + phases[k])

    f_env = rng.uniform(1.5, 4.0)
    env_phase = rng.uniform(0, 2 * np.pi)
    x *= 0.55 - 0.45 * np.cos(2 * np.pi * f_env * t + env_phase)
    x += 0.005 * rng.standard_normal(n)

    x *= 0.8 / np.max(np.abs(x))

    return AudioClip(x, sample_rate)
