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
"""Attacks and processing applied to watermarked audio

:func:`dp_train` is the differentiable normalise, mel, Griffin-Lim chain
used inside training.  :func:`apply` runs one evaluation distortion
described by a :class:`DistortionSpec`; specs can be written as text,
e.g. ``resample:rate=16000`` or ``crop:ratio=0.5,position=middle``, and
chained with ``+``.
"""
from collections import namedtuple, OrderedDict

import numpy as np
from scipy import ndimage, signal

from . import logger
from . import dsp
from .audio_io import AudioClip, resample
from .autodiff import max_abs, reciprocal, scale

FILTER_TAPS = 255
CROP_POSITIONS = ('front', 'middle', 'behind')

_REQUIRED = object()

# kind -> parameter name -> (type, default)
KINDS = OrderedDict([
    ('dp_pipeline', OrderedDict([('gl_iters', (int, 32))])),
    ('normalize', OrderedDict()),
    ('resample', OrderedDict([('rate', (int, _REQUIRED))])),
    ('amplitude_scale', OrderedDict([('p', (float, _REQUIRED))])),
    ('requantize', OrderedDict([('bits', (int, 8))])),
    ('median_filter', OrderedDict([('k', (int, _REQUIRED))])),
    ('low_pass', OrderedDict([('fc', (float, _REQUIRED))])),
    ('high_pass', OrderedDict([('fc', (float, _REQUIRED))])),
    ('gaussian_noise', OrderedDict([('snr_db', (float, _REQUIRED))])),
    ('crop', OrderedDict([('ratio', (float, _REQUIRED)), ('position', (str, 'front'))])),
    ('band_mask', OrderedDict([('start', (float, _REQUIRED)), ('width', (float, _REQUIRED))])),
])

ALIASES = {'dp': 'dp_pipeline'}


class DistortionSpecError(ValueError):
    """Unknown distortion kind or invalid parameters"""


class SilentClipError(ValueError):
    """Peak normalisation of an all-zero signal"""


def _check_ranges(kind, p):
    def fail(msg):
        raise DistortionSpecError("{}: {}".format(kind, msg))

    if kind == 'dp_pipeline' and p['gl_iters'] < 0:
        fail("gl_iters must be >= 0, got {}".format(p['gl_iters']))
    elif kind == 'resample' and p['rate'] <= 0:
        fail("rate must be positive, got {}".format(p['rate']))
    elif kind == 'amplitude_scale' and not 0 < p['p'] <= 1:
        fail("p must lie in (0, 1], got {}".format(p['p']))
    elif kind == 'requantize' and not 2 <= p['bits'] <= 16:
        fail("bits must lie in [2, 16], got {}".format(p['bits']))
    elif kind == 'median_filter' and (p['k'] < 1 or p['k'] % 2 == 0):
        fail("k must be a positive odd number, got {}".format(p['k']))
    elif kind in ('low_pass', 'high_pass') and p['fc'] <= 0:
        fail("fc must be positive, got {}".format(p['fc']))
    elif kind == 'gaussian_noise' and not np.isfinite(p['snr_db']):
        fail("snr_db must be finite, got {}".format(p['snr_db']))
    elif kind == 'crop':
        if not 0 < p['ratio'] < 1:
            fail("ratio must lie in (0, 1), got {}".format(p['ratio']))
        if p['position'] not in CROP_POSITIONS:
            fail("position must be one of {}, got '{}'".format(CROP_POSITIONS, p['position']))
    elif kind == 'band_mask':
        if p['start'] < 0 or p['width'] <= 0 or p['start'] + p['width'] > 1 + 1e-9:
            fail("need start >= 0, width > 0 and start + width <= 1, got {} and {}"
                 "".format(p['start'], p['width']))


class DistortionSpec(namedtuple('DistortionSpec', ['kind', 'params', 'seed'])):
    """A validated distortion and its parameters

    Parameters
    ----------
    kind : str
      one of KINDS (or the alias 'dp')
    params : mapping, optional
      parameters of `kind`; missing optional ones take their default
    seed : int, optional
      seeds stochastic kinds
    """
    __slots__ = ()

    def __new__(cls, kind, params=None, seed=0):
        kind = ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise DistortionSpecError("Unknown distortion '{}', choose from {}".format(kind, list(KINDS)))
        given = dict(params or {})
        schema = KINDS[kind]
        unknown = set(given) - set(schema)
        if unknown:
            raise DistortionSpecError("{}: unknown parameter(s) {}".format(kind, sorted(unknown)))
        full = OrderedDict()
        for name, (typ, default) in schema.items():
            if name in given:
                try:
                    full[name] = typ(given[name])
                except (TypeError, ValueError):
                    raise DistortionSpecError("{}: cannot read {}={!r} as {}"
                                              "".format(kind, name, given[name], typ.__name__))
            elif default is _REQUIRED:
                raise DistortionSpecError("{}: missing required parameter '{}'".format(kind, name))
            else:
                full[name] = default
        _check_ranges(kind, full)
        return super(DistortionSpec, cls).__new__(cls, kind, full, int(seed))

    @property
    def label(self):
        """Text form accepted by :func:`parse_spec`"""
        if not self.params:
            return self.kind
        items = []
        for name, value in self.params.items():
            items.append('{}={:g}'.format(name, value) if isinstance(value, float)
                         else '{}={}'.format(name, value))
        return '{}:{}'.format(self.kind, ','.join(items))

    def with_seed(self, seed):
        return DistortionSpec(self.kind, self.params, seed)


def _parse_one(text, seed):
    text = text.strip()
    if not text:
        raise DistortionSpecError("Empty distortion in chain")
    kind, _, rest = text.partition(':')
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(','))):
        key, eq, value = item.partition('=')
        if not eq:
            raise DistortionSpecError("Expected key=value in '{}', got '{}'".format(text, item))
        key = key.strip()
        if key == 'seed':
            seed = value.strip()
            continue
        params[key] = value.strip()
    try:
        seed = int(seed)
    except ValueError:
        raise DistortionSpecError("seed must be an integer, got '{}'".format(seed))
    return DistortionSpec(kind.strip(), params, seed)


def parse_spec(text, seed=0):
    """Parse ``kind:key=value,...`` items joined by ``+``

    Returns
    -------
    specs : list of DistortionSpec
    """
    return [_parse_one(part, seed) for part in text.split('+')]


def chain_label(specs):
    return '+'.join(s.label for s in specs)


def _peak_normalize(samples):
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0:
        raise SilentClipError("Cannot peak-normalise an all-zero clip")
    return samples / peak


def band_mask_magnitude(magnitude, start, width):
    """Zero the bins [round(start F), round((start + width) F))"""
    n_bins = magnitude.shape[1]
    lo = int(round(start * n_bins))
    hi = int(round((start + width) * n_bins))
    masked = np.array(magnitude, copy=True)
    masked[:, lo:hi] = 0
    return masked


def _fir(clip, fc, pass_zero):
    nyquist = clip.sample_rate / 2.0
    if fc >= nyquist:
        raise DistortionSpecError("cut-off {} Hz is not below Nyquist ({} Hz)".format(fc, nyquist))
    taps = signal.firwin(FILTER_TAPS, fc, fs=clip.sample_rate, pass_zero=pass_zero)
    # symmetric taps centred by 'same' give zero phase
    return signal.oaconvolve(clip.samples, taps, mode='same')


def _crop(samples, ratio, position):
    n = samples.shape[0]
    k = int(round(ratio * n))
    if n - k < 1:
        raise DistortionSpecError("crop ratio {} leaves no samples of {}".format(ratio, n))
    if position == 'front':
        return samples[k:]
    if position == 'behind':
        return samples[:n - k]
    start = (n - k) // 2
    return np.concatenate([samples[:start], samples[start + k:]])


def apply(clip, spec, stft_cfg=None, mel_cfg=None):
    """Apply one distortion

    Parameters
    ----------
    clip : AudioClip
    spec : DistortionSpec
    stft_cfg : StftConfig, optional
      used by dp_pipeline and band_mask, default StftConfig()
    mel_cfg : MelConfig, optional
      used by dp_pipeline, default MelConfig()

    Returns
    -------
    distorted : AudioClip
      same rate; same length except for crop
    """
    stft_cfg = stft_cfg or dsp.StftConfig()
    mel_cfg = mel_cfg or dsp.MelConfig()
    p = spec.params
    x = clip.samples
    kind = spec.kind

    if kind == 'dp_pipeline':
        fb = dsp.mel_filterbank(mel_cfg, stft_cfg.n_fft, clip.sample_rate)
        normalized = AudioClip(_peak_normalize(x), clip.sample_rate)
        mel = dsp.mel_spectrogram(dsp.stft(normalized, stft_cfg).magnitude, fb)
        return dsp.griffin_lim(mel, fb, stft_cfg, p['gl_iters'], length=clip.n_samples,
                               sample_rate=clip.sample_rate)
    elif kind == 'normalize':
        out = _peak_normalize(x)
    elif kind == 'resample':
        there = resample(clip, p['rate'])
        out = resample(there, clip.sample_rate).samples
        # rounding in both legs can change the length by a sample
        if out.shape[0] >= x.shape[0]:
            out = out[:x.shape[0]]
        else:
            out = np.pad(out, (0, x.shape[0] - out.shape[0]))
    elif kind == 'amplitude_scale':
        out = x * p['p']
    elif kind == 'requantize':
        q = 2.0 ** (p['bits'] - 1)
        out = np.clip(np.round(x * q), -q, q - 1) / q
    elif kind == 'median_filter':
        out = ndimage.median_filter(x, size=p['k'], mode='nearest')
    elif kind == 'low_pass':
        out = _fir(clip, p['fc'], 'lowpass')
    elif kind == 'high_pass':
        out = _fir(clip, p['fc'], 'highpass')
    elif kind == 'gaussian_noise':
        power = np.sum(x * x)
        if power == 0:
            raise SilentClipError("Cannot set an SNR against an all-zero clip")
        noise = np.random.default_rng(spec.seed).standard_normal(x.shape[0])
        noise *= np.sqrt(power / (10 ** (p['snr_db'] / 10.0) * np.sum(noise * noise)))
        out = x + noise
    elif kind == 'crop':
        out = _crop(x, p['ratio'], p['position'])
    elif kind == 'band_mask':
        spec_ = dsp.stft(clip, stft_cfg)
        masked = band_mask_magnitude(spec_.magnitude, p['start'], p['width'])
        return dsp.istft(spec_.with_magnitude(masked), sample_rate=clip.sample_rate)
    else:
        raise DistortionSpecError("Unhandled distortion '{}'".format(kind))

    return AudioClip(out, clip.sample_rate)


def apply_chain(clip, specs, stft_cfg=None, mel_cfg=None):
    """Apply distortions one after another"""
    for spec in specs:
        logger.debug("Applying {} to {} samples".format(spec.label, clip.n_samples))
        clip = apply(clip, spec, stft_cfg, mel_cfg)
    return clip


def normalize_graph(x):
    """x / max|x| on a signal Tensor"""
    if np.max(np.abs(x.data)) == 0:
        raise SilentClipError("Cannot peak-normalise an all-zero signal")
    return scale(x, reciprocal(max_abs(x)))


def dp_train(x, stft_cfg, fb, iters=8):
    """Differentiable distortion layer: normalise, mel, Griffin-Lim

    Parameters
    ----------
    x : Tensor
      1-D watermarked signal
    stft_cfg : StftConfig
    fb : numpy array
      mel filterbank
    iters : int
      Griffin-Lim iterations

    Returns
    -------
    distorted : Tensor
      same length as `x`
    """
    magnitude = dsp.magnitude_graph(normalize_graph(x), stft_cfg)
    mel = dsp.mel_graph(magnitude, fb)
    return dsp.griffin_lim_graph(mel, fb, stft_cfg, iters, x.size)
