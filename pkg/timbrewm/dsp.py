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
"""Short-time Fourier analysis, mel filterbanks and Griffin-Lim

Every transform exists twice: as a plain numpy routine working on
:class:`~timbrewm.audio_io.AudioClip` and :class:`Spectrogram`, and as a
graph node on :class:`~timbrewm.autodiff.Tensor` so that gradients can flow
through it during training.

Framing uses reflect padding of n_fft // 2 samples at both ends, which
gives T = 1 + N // hop frames for a clip of N samples.  Synthesis is the
least-squares inverse of that framing: frames are windowed, summed back
onto the sample positions they were read from (including the reflected
ones) and divided by the summed squared window.  For unmodified spectra
this reconstructs the input exactly.
"""
from collections import namedtuple
from functools import lru_cache

import numpy as np
from scipy import signal

from . import logger
from .audio_io import AudioClip
from .autodiff import (Tensor, ShapeError, take, scatter_add, matmul, mul, add,
                       hypot, reciprocal, clamp_min)

# denominator guard when normalising complex frames to unit phase
PHASE_EPS = 1e-8


class ClipTooShortError(ValueError):
    """Clip does not yield enough STFT frames or samples"""


class StftConfig(namedtuple('StftConfig', ['n_fft', 'hop', 'win_len'])):
    """STFT frame layout, Hann window centred in n_fft

    Parameters
    ----------
    n_fft : int
      DFT size, even (default 1024)
    hop : int
      frame advance in samples (default 256)
    win_len : int
      Hann window length, <= n_fft (default 1024)
    """
    __slots__ = ()

    def __new__(cls, n_fft=1024, hop=256, win_len=1024):
        n_fft, hop, win_len = int(n_fft), int(hop), int(win_len)
        if n_fft < 2 or n_fft % 2:
            raise ValueError("n_fft must be a positive even number, got {}".format(n_fft))
        if not 1 <= win_len <= n_fft:
            raise ValueError("win_len must lie in [1, n_fft={}], got {}".format(n_fft, win_len))
        if not 1 <= hop <= win_len:
            raise ValueError("hop must lie in [1, win_len={}], got {}".format(win_len, hop))
        return super(StftConfig, cls).__new__(cls, n_fft, hop, win_len)

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples):
        return 1 + n_samples // self.hop


class MelConfig(namedtuple('MelConfig', ['n_mels', 'f_min', 'f_max'])):
    """HTK mel filterbank layout; f_max of None means sample_rate / 2"""
    __slots__ = ()

    def __new__(cls, n_mels=80, f_min=0.0, f_max=None):
        if n_mels < 1:
            raise ValueError("n_mels must be at least 1, got {}".format(n_mels))
        if f_min < 0:
            raise ValueError("f_min must be non-negative, got {}".format(f_min))
        if f_max is not None and f_max <= f_min:
            raise ValueError("f_max ({}) must exceed f_min ({})".format(f_max, f_min))
        return super(MelConfig, cls).__new__(cls, int(n_mels), float(f_min),
                                             None if f_max is None else float(f_max))


class Spectrogram(namedtuple('Spectrogram', ['magnitude', 'phase', 'config', 'length'])):
    """Magnitude and phase, frames x bins

    Attributes
    ----------
    magnitude : numpy array, T x F
    phase : numpy array, T x F
      radians in (-pi, pi]
    config : StftConfig
    length : int or None
      number of samples of the analysed clip, used by istft
    """
    __slots__ = ()

    @property
    def n_frames(self):
        return self.magnitude.shape[0]

    def with_magnitude(self, magnitude):
        return self._replace(magnitude=magnitude)


@lru_cache(maxsize=16)
def window(cfg):
    """Periodic Hann window of win_len, zero padded to n_fft (centred)"""
    w = signal.get_window('hann', cfg.win_len, fftbins=True)
    left = (cfg.n_fft - cfg.win_len) // 2
    w = np.pad(w, (left, cfg.n_fft - cfg.win_len - left))
    w.flags.writeable = False
    return w


@lru_cache(maxsize=64)
def frame_index(n_samples, cfg):
    """Sample position read by every (frame, tap), shape T x n_fft"""
    if n_samples < 1:
        raise ClipTooShortError("STFT needs at least one sample")
    half = cfg.n_fft // 2
    positions = np.arange(n_samples)
    if n_samples > 1:
        padded = np.pad(positions, half, mode='reflect')
    else:
        padded = np.pad(positions, half, mode='edge')
    starts = np.arange(cfg.n_frames(n_samples)) * cfg.hop
    idx = padded[starts[:, None] + np.arange(cfg.n_fft)[None, :]]
    idx.flags.writeable = False
    return idx


@lru_cache(maxsize=64)
def _envelope(n_samples, cfg):
    """Summed squared window per sample position"""
    idx = frame_index(n_samples, cfg)
    w2 = np.tile(window(cfg) ** 2, idx.shape[0])
    env = np.bincount(idx.ravel(), weights=w2, minlength=n_samples)
    env.flags.writeable = False
    return env


def _analyze(samples, cfg):
    idx = frame_index(samples.shape[0], cfg)
    return np.fft.rfft(samples[idx] * window(cfg), axis=1)


def _synthesize(spectrum, cfg, n_samples):
    idx = frame_index(n_samples, cfg)
    if spectrum.shape != (idx.shape[0], cfg.n_bins):
        raise ShapeError("Spectrum of shape {} does not fit {} samples ({} frames x {} bins)"
                         "".format(spectrum.shape, n_samples, idx.shape[0], cfg.n_bins))
    frames = np.fft.irfft(spectrum, n=cfg.n_fft, axis=1) * window(cfg)
    out = np.bincount(idx.ravel(), weights=frames.ravel(), minlength=n_samples)
    return out / _envelope(n_samples, cfg)


def stft(clip, cfg=StftConfig()):
    """Magnitude and phase of the windowed DFT frames of a clip

    Parameters
    ----------
    clip : AudioClip
    cfg : StftConfig

    Returns
    -------
    spec : Spectrogram
    """
    if clip.n_samples < 1:
        raise ClipTooShortError("Cannot take the STFT of an empty clip")
    spectrum = _analyze(clip.samples, cfg)
    phase = np.angle(spectrum)
    phase[phase <= -np.pi] = np.pi
    return Spectrogram(np.abs(spectrum), phase, cfg, clip.n_samples)


def _canonical_length(n_frames, cfg):
    return (n_frames - 1) * cfg.hop


def istft(spec, sample_rate=22050, length=None):
    """Overlap-add synthesis of magnitude and phase

    Only the real part of the implied signal is kept, so a magnitude that
    was modified with the phase held fixed yields the least-squares
    consistent signal.

    Parameters
    ----------
    spec : Spectrogram
    sample_rate : int, optional
      rate stamped on the output clip
    length : int, optional
      output length, defaults to ``spec.length`` and then (T - 1) * hop

    Returns
    -------
    clip : AudioClip
    """
    if spec.magnitude.shape != spec.phase.shape:
        raise ShapeError("Magnitude shape {} and phase shape {} differ"
                         "".format(spec.magnitude.shape, spec.phase.shape))
    cfg = spec.config
    n_frames = spec.magnitude.shape[0]
    if length is None:
        length = spec.length if spec.length is not None else _canonical_length(n_frames, cfg)
    if cfg.n_frames(length) != n_frames:
        raise ShapeError("{} frames cannot come from {} samples with hop {}"
                         "".format(n_frames, length, cfg.hop))
    spectrum = spec.magnitude * np.exp(1j * spec.phase)
    return AudioClip(_synthesize(spectrum, cfg, length), sample_rate)


def full_spectrum(magnitude):
    """Mirror one-sided bins into the full DFT length, T x n_fft"""
    return np.concatenate([magnitude, magnitude[:, -2:0:-1]], axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(cfg, n_fft, sample_rate):
    """Triangular HTK-mel filters, each peak-normalised to 1

    Parameters
    ----------
    cfg : MelConfig
    n_fft : int
    sample_rate : int

    Returns
    -------
    fb : numpy array, n_mels x (n_fft // 2 + 1)
    """
    f_max = sample_rate / 2.0 if cfg.f_max is None else cfg.f_max
    if f_max > sample_rate / 2.0:
        raise ValueError("f_max {} Hz lies above Nyquist ({} Hz)".format(f_max, sample_rate / 2.0))
    if cfg.f_min >= f_max:
        raise ValueError("f_min {} Hz must be below f_max {} Hz".format(cfg.f_min, f_max))

    fft_freqs = np.linspace(0, sample_rate / 2.0, n_fft // 2 + 1)
    hz = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    lower, centre, upper = hz[:-2, None], hz[1:-1, None], hz[2:, None]
    rising = (fft_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))

    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks == 0)
    if empty.size:
        raise ValueError("{} mel filters are too narrow for n_fft={} (first empty filter {}); "
                         "reduce n_mels or raise n_fft".format(cfg.n_mels, n_fft, empty[0]))
    fb /= peaks[:, None]
    fb.flags.writeable = False
    logger.debug("Built {}-band mel filterbank over {:.1f}-{:.1f} Hz".format(cfg.n_mels, cfg.f_min, f_max))
    return fb


_PINV_CACHE = {}


def _pinv(fb):
    key = (fb.shape, fb.tobytes())
    if key not in _PINV_CACHE:
        _PINV_CACHE[key] = np.linalg.pinv(fb)
    return _PINV_CACHE[key]


def _check_mel_shapes(matrix, fb, axis_len, what):
    if matrix.ndim != 2 or matrix.shape[1] != axis_len:
        raise ShapeError("{} of shape {} does not fit a filterbank of shape {}"
                         "".format(what, matrix.shape, fb.shape))


def mel_spectrogram(magnitude, fb):
    """Frame-wise projection onto the filterbank, T x n_mels"""
    _check_mel_shapes(magnitude, fb, fb.shape[1], 'magnitude')
    return magnitude @ fb.T


def mel_inverse(mel, fb):
    """Least-squares magnitude estimate from a mel spectrogram, clamped at 0"""
    _check_mel_shapes(mel, fb, fb.shape[0], 'mel spectrogram')
    return np.maximum(mel @ _pinv(fb).T, 0.0)


def griffin_lim(mel, fb, cfg=StftConfig(), iters=32, length=None, sample_rate=22050, callback=None):
    """Recover a waveform whose magnitude matches ``mel_inverse(mel)``

    Phase starts at zero and is refined by alternating synthesis and
    analysis while the magnitude is pinned to the target.

    Parameters
    ----------
    mel : numpy array, T x n_mels
    fb : numpy array
      filterbank used to make `mel`
    cfg : StftConfig
    iters : int
      number of refinement iterations, >= 0
    length : int, optional
      output length in samples, default (T - 1) * hop
    sample_rate : int, optional
    callback : callable, optional
      called as ``callback(k, magnitude)`` with the magnitude re-analysed
      after iteration k

    Returns
    -------
    clip : AudioClip
    """
    if iters < 0:
        raise ValueError("Griffin-Lim iterations must be >= 0, got {}".format(iters))
    target = mel_inverse(mel, fb)
    if length is None:
        length = _canonical_length(target.shape[0], cfg)

    angles = np.ones(target.shape, dtype=np.complex128)
    for k in range(iters):
        rebuilt = _analyze(_synthesize(target * angles, cfg, length), cfg)
        magnitude = np.abs(rebuilt)
        angles = np.where(magnitude > PHASE_EPS, rebuilt / np.maximum(magnitude, PHASE_EPS), 1.0)
        if callback is not None:
            callback(k, magnitude)

    return AudioClip(_synthesize(target * angles, cfg, length), sample_rate)


# graph nodes


@lru_cache(maxsize=8)
def _dft_matrices(n_fft, dtype):
    """Real DFT as matrices: analysis (n_fft x F) and synthesis (F x n_fft)"""
    n_bins = n_fft // 2 + 1
    angle = 2 * np.pi * np.outer(np.arange(n_fft), np.arange(n_bins)) / n_fft
    fwd_re = np.cos(angle)
    fwd_im = -np.sin(angle)
    weight = np.full(n_bins, 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    inv_re = (weight[:, None] * np.cos(angle.T)) / n_fft
    inv_im = -(weight[:, None] * np.sin(angle.T)) / n_fft
    mats = tuple(m.astype(dtype) for m in (fwd_re, fwd_im, inv_re, inv_im))
    for m in mats:
        m.flags.writeable = False
    return mats


def _const(array, dtype):
    return Tensor(np.asarray(array, dtype=dtype))


def stft_graph(x, cfg=StftConfig()):
    """Differentiable STFT of a 1-D tensor, returns (real, imag) T x F"""
    if x.ndim != 1:
        raise ShapeError("stft_graph needs a 1-D signal, got shape {}".format(x.shape))
    if x.size < 1:
        raise ClipTooShortError("Cannot take the STFT of an empty signal")
    idx = frame_index(x.size, cfg)
    fwd_re, fwd_im, _, _ = _dft_matrices(cfg.n_fft, x.dtype.str)
    win = np.broadcast_to(window(cfg).astype(x.dtype), idx.shape)
    frames = mul(take(x, idx), Tensor(win))
    return matmul(frames, Tensor(fwd_re)), matmul(frames, Tensor(fwd_im))


def magnitude_graph(x, cfg=StftConfig()):
    """Differentiable STFT magnitude, T x F"""
    re, im = stft_graph(x, cfg)
    return hypot(re, im)


def istft_graph(re, im, cfg, n_samples):
    """Differentiable least-squares overlap-add of a complex spectrum"""
    idx = frame_index(n_samples, cfg)
    if re.shape != (idx.shape[0], cfg.n_bins) or im.shape != re.shape:
        raise ShapeError("Spectrum parts {} / {} do not fit {} samples ({} frames x {} bins)"
                         "".format(re.shape, im.shape, n_samples, idx.shape[0], cfg.n_bins))
    dtype = re.dtype
    _, _, inv_re, inv_im = _dft_matrices(cfg.n_fft, dtype.str)
    frames = add(matmul(re, Tensor(inv_re)), matmul(im, Tensor(inv_im)))
    frames = mul(frames, Tensor(np.broadcast_to(window(cfg).astype(dtype), idx.shape)))
    out = scatter_add(frames, idx, n_samples)
    return mul(out, _const(1.0 / _envelope(n_samples, cfg), dtype))


def istft_with_phase_graph(magnitude, phase, cfg, n_samples):
    """Resynthesise a magnitude tensor with a fixed numpy phase"""
    dtype = magnitude.dtype
    re = mul(magnitude, _const(np.cos(phase), dtype))
    im = mul(magnitude, _const(np.sin(phase), dtype))
    return istft_graph(re, im, cfg, n_samples)


def mel_graph(magnitude, fb):
    _check_mel_shapes(magnitude, fb, fb.shape[1], 'magnitude')
    return matmul(magnitude, _const(fb.T, magnitude.dtype))


def mel_inverse_graph(mel, fb):
    _check_mel_shapes(mel, fb, fb.shape[0], 'mel spectrogram')
    return clamp_min(matmul(mel, _const(_pinv(fb).T, mel.dtype)), 0.0)


def griffin_lim_graph(mel, fb, cfg, iters, n_samples):
    """Differentiable Griffin-Lim, zero initial phase

    Unit phases are formed as X / (|X| + PHASE_EPS), so bins with no
    energy contribute nothing instead of a unit phase.
    """
    target = mel_inverse_graph(mel, fb)
    re = target
    im = _const(np.zeros(target.shape), target.dtype)
    for _ in range(iters):
        y_re, y_im = stft_graph(istft_graph(re, im, cfg, n_samples), cfg)
        inv = reciprocal(add(hypot(y_re, y_im), PHASE_EPS))
        scaled = mul(target, inv)
        re = mul(scaled, y_re)
        im = mul(scaled, y_im)
    return istft_graph(re, im, cfg, n_samples)
