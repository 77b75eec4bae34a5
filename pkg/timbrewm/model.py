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
"""Watermark embedder, extractor and discriminator networks

The carrier encoder EN_c and watermark encoder EN_w feed the embedder EM,
which writes the watermark into the STFT magnitude.  The extractor EX and
decoder DE read it back after averaging over time, so the payload does
not depend on which frames survive.  The discriminator D scores audio as
real or watermarked.

Network functions ending in ``_graph`` work on
:class:`~timbrewm.autodiff.Tensor` and are used for training; the others
take and return numpy data and run with frozen parameters.
"""
from collections import namedtuple, OrderedDict
import hashlib

import numpy as np

from . import logger
from . import dsp
from .audio_io import AudioClip
from .autodiff import (Tensor, ShapeError, parameter, reshape, concat_channels, repeat_time,
                       mean_time, avg_pool_all, leaky_relu, clamp_min, sigmoid, log,
                       mean, square, sub)
from .autodiff import clip as clip_range
from .dsp import ClipTooShortError
from .layers import (gated_block, relu_block, linear, init_gated_block, init_relu_block,
                     init_linear, LEAKY_SLOPE)
from .metrics import bit_acc

# replicate frames along time so constant spectrograms stay constant
NETWORK_PAD = 'time_edge'
# bounds on sigmoid outputs before taking logs
PROB_EPS = 1e-7
# initial scale of the embedder's gated residual
EMBED_RESIDUAL_SCALE = 0.1


class WatermarkLengthError(ValueError):
    """Payload length differs from the model's watermark length"""


class Architecture(namedtuple('Architecture', [
        'wm_length', 'hidden_channels', 'carrier_blocks', 'embedder_blocks',
        'extractor_blocks', 'disc_channels', 'kernel_size', 'skip_concat',
        'n_fft', 'hop', 'win_len', 'sample_rate', 'n_mels', 'f_min', 'f_max'])):
    """Shape of every network, stored in checkpoints

    Defaults give a 10-bit model with 8 hidden channels, 6/4/6 gated
    blocks, an 8-16-16 discriminator and 1024/256/1024 STFT at 22050 Hz.
    """
    __slots__ = ()

    def __new__(cls, wm_length=10, hidden_channels=8, carrier_blocks=6, embedder_blocks=4,
                extractor_blocks=6, disc_channels=(8, 16, 16), kernel_size=3, skip_concat=True,
                n_fft=1024, hop=256, win_len=1024, sample_rate=22050, n_mels=80, f_min=0.0, f_max=None):
        disc_channels = tuple(int(c) for c in disc_channels)
        for name, value in (('wm_length', wm_length), ('hidden_channels', hidden_channels),
                            ('carrier_blocks', carrier_blocks), ('embedder_blocks', embedder_blocks),
                            ('extractor_blocks', extractor_blocks), ('sample_rate', sample_rate),
                            ('n_mels', n_mels)):
            if int(value) != value or value < 1:
                raise ValueError("Architecture {} must be a positive integer, got {}".format(name, value))
        if not disc_channels or min(disc_channels) < 1:
            raise ValueError("disc_channels must be a non-empty list of positive widths, got {}"
                             "".format(disc_channels))
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd, got {}".format(kernel_size))
        # validates the STFT fields
        dsp.StftConfig(n_fft, hop, win_len)
        mel = dsp.MelConfig(n_mels, f_min, f_max)
        if mel.f_max is not None and mel.f_max > sample_rate / 2.0:
            raise ValueError("f_max {} is above Nyquist ({} Hz)".format(f_max, sample_rate / 2.0))
        return super(Architecture, cls).__new__(
            cls, int(wm_length), int(hidden_channels), int(carrier_blocks), int(embedder_blocks),
            int(extractor_blocks), disc_channels, int(kernel_size), bool(skip_concat),
            int(n_fft), int(hop), int(win_len), int(sample_rate), mel.n_mels, mel.f_min, mel.f_max)

    @property
    def stft_config(self):
        return dsp.StftConfig(self.n_fft, self.hop, self.win_len)

    @property
    def mel_config(self):
        return dsp.MelConfig(self.n_mels, self.f_min, self.f_max)

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    @property
    def embedder_input_channels(self):
        return self.hidden_channels + (2 if self.skip_concat else 1)

    def channel_schedule(self, network):
        """(c_in, c_out) for every block of 'EN_c', 'EM', 'EX' or 'D'"""
        h = self.hidden_channels
        if network == 'EN_c':
            widths = [1] + [h] * self.carrier_blocks
        elif network == 'EM':
            widths = [self.embedder_input_channels] + [h] * (self.embedder_blocks - 1) + [1]
        elif network == 'EX':
            widths = [1] + [h] * (self.extractor_blocks - 1) + [1]
        elif network == 'D':
            widths = [1] + list(self.disc_channels)
        else:
            raise ValueError("Unknown network '{}'".format(network))
        return list(zip(widths[:-1], widths[1:]))

    def descriptor(self):
        """JSON-ready mapping, disc_channels as a list"""
        d = OrderedDict(self._asdict())
        d['disc_channels'] = list(self.disc_channels)
        return d

    @classmethod
    def from_descriptor(cls, d):
        unknown = set(d) - set(cls._fields)
        if unknown:
            raise ValueError("Unknown architecture fields: {}".format(sorted(unknown)))
        return cls(**d)


class LossWeights(namedtuple('LossWeights', ['lambda_e', 'lambda_adv', 'lambda_w'])):
    """Weights of the embedding, adversarial and watermark losses"""
    __slots__ = ()

    def __new__(cls, lambda_e=1.0, lambda_adv=0.01, lambda_w=0.01):
        for name, value in (('lambda_e', lambda_e), ('lambda_adv', lambda_adv), ('lambda_w', lambda_w)):
            if value < 0:
                raise ValueError("{} must be non-negative, got {}".format(name, value))
        return super(LossWeights, cls).__new__(cls, float(lambda_e), float(lambda_adv), float(lambda_w))


class WatermarkBits(namedtuple('WatermarkBits', ['bits', 'soft'])):
    """An n-bit payload and, after extraction, the decoder's soft values

    Attributes
    ----------
    bits : numpy array of int8
      values in {0, 1}
    soft : numpy array or None
      decoder outputs; hard bits are soft >= 0.5
    """
    __slots__ = ()

    def __new__(cls, bits, soft=None):
        bits = np.asarray(bits)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError("A watermark needs at least one bit, got shape {}".format(bits.shape))
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("Watermark bits must be 0 or 1, got {}".format(bits))
        if soft is not None:
            soft = np.asarray(soft, dtype=np.float64)
            if soft.shape != bits.shape:
                raise ValueError("soft values {} do not match {} bits".format(soft.shape, bits.size))
        return super(WatermarkBits, cls).__new__(cls, bits.astype(np.int8), soft)

    @property
    def n(self):
        return self.bits.size

    def to_string(self):
        return ''.join(str(int(b)) for b in self.bits)

    def as_float(self, dtype=np.float32):
        return self.bits.astype(dtype)

    @classmethod
    def from_string(cls, text):
        """Parse a string of '0' and '1' characters"""
        text = text.strip()
        if not text or set(text) - {'0', '1'}:
            raise ValueError("Watermark bitstring must contain only 0 and 1, got '{}'".format(text))
        return cls([int(c) for c in text])

    @classmethod
    def from_text(cls, text, n):
        """First n bits (most significant first) of the SHA-256 of UTF-8 text"""
        if not 1 <= n <= 256:
            raise ValueError("Can derive 1 to 256 bits from text, asked for {}".format(n))
        digest = hashlib.sha256(text.encode('utf-8')).digest()
        bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))
        return cls(bits[:n])

    @classmethod
    def from_soft(cls, soft):
        soft = np.asarray(soft, dtype=np.float64)
        return cls((soft >= 0.5).astype(np.int8), soft)

    @classmethod
    def random(cls, n, rng):
        """Uniform random payload; `rng` is a numpy Generator or a seed"""
        rng = np.random.default_rng(rng)
        return cls(rng.integers(0, 2, size=n))


class ModelParams(object):
    """Named parameter tensors of all networks

    Names look like ``EN_c.0.conv_a.weight``, ``EN_w.weight``,
    ``EM.3.proj.bias``, ``DE.bias``, ``D.1.norm.weight`` and
    ``D.head.weight``.

    Parameters
    ----------
    arch : Architecture
    tensors : OrderedDict of name -> Tensor
    """
    def __init__(self, arch, tensors):
        self.arch = arch
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def group(self, prefix):
        """Tensors under `prefix`, keyed by the rest of their name"""
        start = prefix + '.'
        return OrderedDict((name[len(start):], t) for name, t in self.tensors.items()
                           if name.startswith(start))

    def generator_names(self):
        return [name for name in self.tensors if not name.startswith('D.')]

    def discriminator_names(self):
        return [name for name in self.tensors if name.startswith('D.')]

    def subset(self, names):
        return OrderedDict((name, self.tensors[name]) for name in names)

    def count(self, names=None):
        names = self.tensors if names is None else names
        return int(np.sum([self.tensors[name].size for name in names]))

    def frozen(self):
        """Same arrays, no gradient tracking"""
        return ModelParams(self.arch, ((name, Tensor(t.data, name=name)) for name, t in self.items()))

    def copy(self, dtype=None):
        """Independent trainable copy, optionally cast"""
        def cast(a):
            return a.astype(dtype) if dtype is not None else a.copy()
        return ModelParams(self.arch, ((name, parameter(cast(t.data), name=name))
                                       for name, t in self.items()))

    def arrays(self):
        return OrderedDict((name, t.data) for name, t in self.items())

    @classmethod
    def from_arrays(cls, arch, arrays):
        return cls(arch, ((name, parameter(a, name=name)) for name, a in arrays.items()))


def _wire_carrier(arrays, arch, residual_scale):
    """Route the skip-concatenated carrier through the embedder projections

    Every channel-changing projection copies the carrier channel into
    output channel 0, and the gated residuals are scaled by
    `residual_scale`.
    """
    src = arch.hidden_channels
    for i, (c_in, c_out) in enumerate(arch.channel_schedule('EM')):
        prefix = 'EM.{}.'.format(i)
        arrays[prefix + 'conv_a.weight'] *= residual_scale
        arrays[prefix + 'conv_a.bias'] *= residual_scale
        if c_in != c_out:
            w = np.zeros_like(arrays[prefix + 'proj.weight'])
            w[0, src, 0, 0] = 1
            arrays[prefix + 'proj.weight'] = w
            arrays[prefix + 'proj.bias'] = np.zeros_like(arrays[prefix + 'proj.bias'])
            src = 0


def _init_arrays(arch, seed, dtype):
    rng = np.random.default_rng(seed)
    k = arch.kernel_size
    arrays = OrderedDict()

    def add_block(prefix, block):
        for local, a in block.items():
            arrays['{}.{}'.format(prefix, local)] = a

    for i, (c_in, c_out) in enumerate(arch.channel_schedule('EN_c')):
        add_block('EN_c.{}'.format(i), init_gated_block(rng, c_in, c_out, k, dtype))
    arrays['EN_w.weight'], arrays['EN_w.bias'] = init_linear(rng, arch.n_bins, arch.wm_length, dtype)
    for i, (c_in, c_out) in enumerate(arch.channel_schedule('EM')):
        add_block('EM.{}'.format(i), init_gated_block(rng, c_in, c_out, k, dtype))
    for i, (c_in, c_out) in enumerate(arch.channel_schedule('EX')):
        add_block('EX.{}'.format(i), init_gated_block(rng, c_in, c_out, k, dtype))
    arrays['DE.weight'], arrays['DE.bias'] = init_linear(rng, arch.wm_length, arch.n_bins, dtype)
    for i, (c_in, c_out) in enumerate(arch.channel_schedule('D')):
        add_block('D.{}'.format(i), init_relu_block(rng, c_in, c_out, k, dtype))
    arrays['D.head.weight'] = np.zeros((1, arch.disc_channels[-1]), dtype=dtype)
    arrays['D.head.bias'] = np.zeros(1, dtype=dtype)

    if arch.skip_concat:
        _wire_carrier(arrays, arch, EMBED_RESIDUAL_SCALE)
    return arrays


def parameter_shapes(arch):
    """Name -> shape of every parameter of `arch`, in storage order"""
    return OrderedDict((name, a.shape) for name, a in _init_arrays(arch, 0, np.float32).items())


def init_params(arch, seed=0, dtype=np.float32):
    """Seeded random parameters for every network

    Convolutions and linear layers are uniform in +-1/sqrt(fan_in).  With
    skip concatenation the embedder starts close to passing the carrier
    magnitude through unchanged.  The discriminator's output layer starts
    at zero so its first logits are 0.

    Parameters
    ----------
    arch : Architecture
    seed : int
    dtype : numpy dtype, optional
      float32 for training, float64 for gradient checks

    Returns
    -------
    params : ModelParams
    """
    params = ModelParams.from_arrays(arch, _init_arrays(arch, seed, dtype))
    logger.info("Initialised {} generator and {} discriminator parameters (seed {})".format(
        params.count(params.generator_names()), params.count(params.discriminator_names()), seed))
    return params


def carrier_passthrough(params):
    """Copy of `params` whose embedder returns the carrier unchanged

    Only meaningful with skip concatenation; the gated residuals are zeroed
    and the projections copy the carrier channel.
    """
    if not params.arch.skip_concat:
        raise ValueError("carrier_passthrough needs an architecture with skip_concat")
    arrays = OrderedDict((name, a.copy()) for name, a in params.arrays().items())
    _wire_carrier(arrays, params.arch, 0.0)
    return ModelParams.from_arrays(params.arch, arrays)


def _run_gated(x, params, network, n_blocks):
    for i in range(n_blocks):
        x = gated_block(x, params.group('{}.{}'.format(network, i)), NETWORK_PAD)
    return x


def _check_watermark(w, arch):
    if w.n != arch.wm_length:
        raise WatermarkLengthError("Watermark has {} bits but the model embeds {}".format(w.n, arch.wm_length))


def _as_image(magnitude, arch):
    if magnitude.ndim != 2 or magnitude.shape[1] != arch.n_bins:
        raise ShapeError("Magnitude of shape {} does not have {} bins".format(magnitude.shape, arch.n_bins))
    if magnitude.shape[0] < 1:
        raise ClipTooShortError("Spectrogram has no frames")
    return reshape(magnitude, (1,) + magnitude.shape)


def embed_spectrogram_graph(s, w, params):
    """Watermarked magnitude from carrier magnitude `s` (T x F Tensor)

    Parameters
    ----------
    s : Tensor
      carrier magnitude, T x F
    w : WatermarkBits
    params : ModelParams

    Returns
    -------
    s_w : Tensor
      T x F, non-negative
    """
    arch = params.arch
    _check_watermark(w, arch)
    image = _as_image(s, arch)
    n_frames = s.shape[0]

    f_c = _run_gated(image, params, 'EN_c', arch.carrier_blocks)
    wm = Tensor(w.as_float(params.dtype))
    f_w = leaky_relu(linear(wm, params['EN_w.weight'], params['EN_w.bias']), LEAKY_SLOPE)
    f_w = repeat_time(reshape(f_w, (1, 1, arch.n_bins)), n_frames)

    parts = [f_c, image, f_w] if arch.skip_concat else [f_c, f_w]
    out = _run_gated(concat_channels(parts), params, 'EM', arch.embedder_blocks)
    return clamp_min(reshape(out, s.shape), 0.0)


def extract_spectrogram_graph(magnitude, params):
    """Soft watermark values (n,) from a T x F magnitude Tensor"""
    arch = params.arch
    features = _run_gated(_as_image(magnitude, arch), params, 'EX', arch.extractor_blocks)
    pooled = reshape(mean_time(features), (arch.n_bins,))
    return linear(pooled, params['DE.weight'], params['DE.bias'])


def discriminate_graph(x, params):
    """Real/watermarked logit (0-d Tensor) of a 1-D signal Tensor"""
    arch = params.arch
    h = _as_image(dsp.magnitude_graph(x, arch.stft_config), arch)
    for i in range(len(arch.disc_channels)):
        h = relu_block(h, params.group('D.{}'.format(i)), NETWORK_PAD)
    logit = linear(avg_pool_all(h), params['D.head.weight'], params['D.head.bias'])
    return reshape(logit, ())


def embed_audio_graph(x, phase, w, params):
    """Differentiable embedding of a 1-D signal Tensor with fixed phase

    Returns the watermarked signal Tensor of the same length.
    """
    cfg = params.arch.stft_config
    s = dsp.magnitude_graph(x, cfg)
    s_w = embed_spectrogram_graph(s, w, params)
    return dsp.istft_with_phase_graph(s_w, phase, cfg, x.size)


def extract_audio_graph(x, params):
    return extract_spectrogram_graph(dsp.magnitude_graph(x, params.arch.stft_config), params)


def _check_rate(clip, arch):
    if clip.sample_rate != arch.sample_rate:
        raise ValueError("Clip is sampled at {} Hz but the model expects {} Hz; resample it first"
                         "".format(clip.sample_rate, arch.sample_rate))


def embed_spectrogram(s, w, params):
    """Numpy version of :func:`embed_spectrogram_graph`"""
    frozen = params.frozen()
    s_w = embed_spectrogram_graph(Tensor(np.asarray(s, dtype=frozen.dtype)), w, frozen)
    return s_w.data.astype(np.float64)


def embed_audio(clip, w, params):
    """Watermark a clip, keeping its original phase

    Parameters
    ----------
    clip : AudioClip
      at the model's sample rate
    w : WatermarkBits
    params : ModelParams

    Returns
    -------
    watermarked : AudioClip
      same length and rate as `clip`
    """
    _check_rate(clip, params.arch)
    _check_watermark(w, params.arch)
    spec = dsp.stft(clip, params.arch.stft_config)
    s_w = embed_spectrogram(spec.magnitude, w, params)
    return dsp.istft(spec.with_magnitude(s_w), sample_rate=clip.sample_rate)


def extract_spectrogram(magnitude, params):
    """Decode a payload directly from a magnitude spectrogram"""
    frozen = params.frozen()
    soft = extract_spectrogram_graph(Tensor(np.asarray(magnitude, dtype=frozen.dtype)), frozen)
    return WatermarkBits.from_soft(soft.data)


def extract_audio(clip, params):
    """Decode a payload from audio; phase is ignored

    Returns
    -------
    w : WatermarkBits
      hard bits with the decoder's soft values attached
    """
    _check_rate(clip, params.arch)
    spec = dsp.stft(clip, params.arch.stft_config)
    return extract_spectrogram(spec.magnitude, params)


def discriminate(clip, params):
    """Discriminator logit for a clip; sigmoid(logit) is P(real)"""
    _check_rate(clip, params.arch)
    frozen = params.frozen()
    logit = discriminate_graph(Tensor(clip.samples.astype(frozen.dtype)), frozen)
    return float(logit.item())


# losses


LossTerms = namedtuple('LossTerms', ['L_e', 'L_adv', 'L_d', 'L_w', 'L_w_hat', 'L_total'])


def _prob(logit):
    return clip_range(sigmoid(logit), PROB_EPS, 1 - PROB_EPS)


def embedding_loss(a, a_w):
    """Mean squared sample error"""
    return mean(square(sub(a_w, a)))


def adversarial_loss(logit_fake):
    """-log sigmoid(D(a_w))"""
    return -log(_prob(logit_fake))


def discriminator_loss(logit_real, logit_fake):
    """-log sigmoid(D(a)) - log(1 - sigmoid(D(a_w)))"""
    return -log(_prob(logit_real)) - log(1 - _prob(logit_fake))


def watermark_loss(w, soft):
    """Mean squared error between {0, 1} targets and decoder output"""
    target = Tensor(w.as_float(soft.dtype)) if isinstance(w, WatermarkBits) else w
    return mean(square(sub(soft, target)))


def total_loss(l_e, l_adv, l_w, l_w_hat, weights=LossWeights()):
    """lambda_e L_e + lambda_adv L_adv + lambda_w (L_w + L_w_hat)"""
    return weights.lambda_e * l_e + weights.lambda_adv * l_adv + weights.lambda_w * (l_w + l_w_hat)


def compute_losses(a, a_w, w, soft, soft_distorted, logit_real, logit_fake, weights=LossWeights()):
    """Every loss term for one clip

    Parameters
    ----------
    a, a_w : Tensor
      original and watermarked samples
    w : WatermarkBits
    soft : Tensor
      decoder output on a_w
    soft_distorted : Tensor or None
      decoder output after the distortion layer; None gives L_w_hat = 0
    logit_real, logit_fake : Tensor
      discriminator logits of a and a_w

    Returns
    -------
    terms : LossTerms
      Tensors; L_d is computed from the same logits as L_adv and is not
      part of L_total
    """
    l_e = embedding_loss(a, a_w)
    l_adv = adversarial_loss(logit_fake)
    l_d = discriminator_loss(logit_real, logit_fake)
    l_w = watermark_loss(w, soft)
    if soft_distorted is None:
        l_w_hat = Tensor(np.zeros((), dtype=soft.dtype))
    else:
        l_w_hat = watermark_loss(w, soft_distorted)
    return LossTerms(l_e, l_adv, l_d, l_w, l_w_hat, total_loss(l_e, l_adv, l_w, l_w_hat, weights))


# detection


DetectionResult = namedtuple('DetectionResult', ['attack_detected', 'per_segment_acc', 'decoded'])


def split_segments(n_samples, segments):
    """(start, stop) of contiguous equal parts, remainder in the last"""
    if segments < 1:
        raise ValueError("Need at least one segment, got {}".format(segments))
    length = n_samples // segments
    if length < 1:
        raise ClipTooShortError("{} samples cannot be split into {} segments".format(n_samples, segments))
    bounds = [i * length for i in range(segments)] + [n_samples]
    return list(zip(bounds[:-1], bounds[1:]))


def decide(per_segment_acc, threshold=0.9):
    """Detected iff every segment's accuracy reaches the threshold"""
    return bool(len(per_segment_acc) > 0 and all(acc >= threshold for acc in per_segment_acc))


def detect(clip, w, params, threshold=0.9, segments=5):
    """Check a suspicious clip for the watermark `w`

    Parameters
    ----------
    clip : AudioClip
    w : WatermarkBits
    params : ModelParams
    threshold : float, optional
      per-segment accuracy needed, inclusive
    segments : int, optional

    Returns
    -------
    result : DetectionResult
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1], got {}".format(threshold))
    _check_watermark(w, params.arch)
    accs = []
    decoded = []
    for start, stop in split_segments(clip.n_samples, segments):
        part = AudioClip(clip.samples[start:stop], clip.sample_rate)
        found = extract_audio(part, params)
        decoded.append(found)
        accs.append(bit_acc(w, found))
        logger.debug("Segment [{}, {}): acc {:.3f}".format(start, stop, accs[-1]))
    return DetectionResult(decide(accs, threshold), accs, decoded)
