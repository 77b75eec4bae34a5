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
"""Joint training of embedder, extractor and discriminator

Each step draws a batch of clips and one random watermark per clip,
embeds, extracts from the clean and (optionally) the distortion-layer
output, and scores both the original and watermarked audio with the
discriminator.  Generator parameters then take an Adam step on L_total
and the discriminator on L_d, both from the same forward pass.

Random draws for step k come from streams seeded by (seed, purpose, k),
so a run resumed from a checkpoint continues exactly like an
uninterrupted one.
"""
from collections import namedtuple
import glob
import os

import numpy as np
from tqdm import tqdm

from . import logger
from . import dsp
from .audio_io import read_wav, resample, synth_test_signal, AudioClip
from .autodiff import Tensor, check_finite
from .distortion import dp_train
from .model import (Architecture, LossWeights, WatermarkBits, init_params, embed_audio_graph,
                    extract_audio_graph, discriminate_graph, compute_losses, discriminator_loss)
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .results_io import load_checkpoint, history_from_rows, TRAINING_LOG_HEADER

PURPOSE_DATA = 0
PURPOSE_WATERMARK = 1

# training clip i of seed s is synthesised from seed s * CORPUS_STRIDE + i
CORPUS_STRIDE = 10000


class TrainConfig(namedtuple('TrainConfig', [
        'seed', 'clip_seconds', 'batch_size', 'steps', 'n_clips', 'use_distortion_layer',
        'gl_train_iters', 'weights', 'wm_length', 'learning_rate', 'data_dir', 'arch'])):
    """Settings of one training run

    Parameters
    ----------
    seed : int
    clip_seconds : float
      length of every training clip
    batch_size : int
    steps : int
      total steps, including those of a resumed checkpoint
    n_clips : int
      size of the synthetic corpus (ignored with data_dir)
    use_distortion_layer : bool
      False trains the distortion-blind ablation
    gl_train_iters : int
      Griffin-Lim iterations inside the distortion layer
    weights : LossWeights
    wm_length : int
    learning_rate : float
    data_dir : str or None
      directory of WAV files to use instead of synthetic clips
    arch : Architecture or None
      defaults to Architecture(wm_length=wm_length)
    """
    __slots__ = ()

    def __new__(cls, seed=0, clip_seconds=0.5, batch_size=2, steps=2000, n_clips=64,
                use_distortion_layer=True, gl_train_iters=8, weights=None, wm_length=10,
                learning_rate=2e-5, data_dir=None, arch=None):
        if steps < 1:
            raise ValueError("steps must be at least 1, got {}".format(steps))
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1, got {}".format(batch_size))
        if clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive, got {}".format(clip_seconds))
        if gl_train_iters < 0:
            raise ValueError("gl_train_iters must be >= 0, got {}".format(gl_train_iters))
        if data_dir is None and n_clips < batch_size:
            raise ValueError("n_clips ({}) must be at least batch_size ({})".format(n_clips, batch_size))
        if arch is None:
            arch = Architecture(wm_length=wm_length)
        elif arch.wm_length != wm_length:
            raise ValueError("wm_length {} differs from the architecture's {}".format(wm_length, arch.wm_length))
        weights = LossWeights() if weights is None else weights
        return super(TrainConfig, cls).__new__(
            cls, int(seed), float(clip_seconds), int(batch_size), int(steps), int(n_clips),
            bool(use_distortion_layer), int(gl_train_iters), weights, int(wm_length),
            float(learning_rate), data_dir, arch)


TrainResult = namedtuple('TrainResult', ['params', 'adam', 'history', 'step'])


def step_rng(seed, purpose, step):
    """Random generator for one purpose at one step"""
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, step]))


def _chunks(clip, n):
    for start in range(0, clip.n_samples - n + 1, n):
        yield AudioClip(clip.samples[start:start + n], clip.sample_rate)


def load_corpus(cfg):
    """Training clips of cfg.clip_seconds at the model's rate

    Synthetic clips by default; with ``cfg.data_dir`` every ``*.wav`` in the
    directory (sorted by name) is resampled and cut into whole clips.

    Returns
    -------
    clips : list of AudioClip
    """
    rate = cfg.arch.sample_rate
    n = int(round(cfg.clip_seconds * rate))
    if cfg.data_dir is None:
        logger.info("Synthesising {} training clips of {} s".format(cfg.n_clips, cfg.clip_seconds))
        return [synth_test_signal(cfg.seed * CORPUS_STRIDE + i, cfg.clip_seconds, rate)
                for i in range(cfg.n_clips)]

    if not os.path.isdir(cfg.data_dir):
        raise FileNotFoundError("Training data directory {} does not exist".format(cfg.data_dir))
    clips = []
    for path in sorted(glob.glob(os.path.join(cfg.data_dir, '*.wav'))):
        clips.extend(_chunks(resample(read_wav(path), rate), n))
    if len(clips) < cfg.batch_size:
        raise ValueError("{} yields {} clips of {} s, fewer than batch_size {}"
                         "".format(cfg.data_dir, len(clips), cfg.clip_seconds, cfg.batch_size))
    logger.info("Loaded {} training clips from {}".format(len(clips), cfg.data_dir))
    return clips


def _train_step(step, batch, cfg, params, adam, fb, rng_wm):
    """One joint update; returns the batch-mean loss row"""
    arch = params.arch
    stft_cfg = arch.stft_config
    gen_names = params.generator_names()
    disc_names = params.discriminator_names()
    share = np.asarray(1.0 / len(batch), dtype=params.dtype)

    totals = np.zeros(len(TRAINING_LOG_HEADER) - 1)
    fakes = []
    zero_grads(params)
    for clip in batch:
        w = WatermarkBits.random(arch.wm_length, rng_wm)
        x = Tensor(clip.samples.astype(params.dtype))
        phase = dsp.stft(clip, stft_cfg).phase

        a_w = embed_audio_graph(x, phase, w, params)
        soft = extract_audio_graph(a_w, params)
        if cfg.use_distortion_layer:
            soft_hat = extract_audio_graph(dp_train(a_w, stft_cfg, fb, cfg.gl_train_iters), params)
        else:
            soft_hat = None
        logit_fake = discriminate_graph(a_w, params)
        logit_real = discriminate_graph(x, params)

        terms = compute_losses(x, a_w, w, soft, soft_hat, logit_real, logit_fake, cfg.weights)
        for name, value in zip(terms._fields, terms):
            check_finite(value, name, step=step)
        terms.L_total.backward(share)
        totals += [float(v.item()) for v in terms]
        fakes.append((x, a_w.detach()))

    grads = collect_grads(params.subset(gen_names))

    zero_grads(params)
    for x, a_w in fakes:
        l_d = discriminator_loss(discriminate_graph(x, params), discriminate_graph(a_w, params))
        l_d.backward(share)
    grads.update(collect_grads(params.subset(disc_names)))

    adam_step(params, grads, adam, step=step)
    zero_grads(params)

    return [step] + list(totals / len(batch))


def train(cfg, resume=None, progress=True):
    """Train all networks

    Parameters
    ----------
    cfg : TrainConfig
    resume : str, optional
      checkpoint carrying optimiser state to continue from
    progress : bool, optional
      show a progress bar

    Returns
    -------
    result : TrainResult
      params, Adam state, TrainingHistory of the steps run here, and the
      number of steps completed

    Raises
    ------
    DivergenceError
      if a loss or gradient becomes non-finite, naming the step
    """
    arch = cfg.arch
    if resume is None:
        params = init_params(arch, seed=cfg.seed)
        adam = AdamState(lr=cfg.learning_rate)
        start = 0
    else:
        ckpt = load_checkpoint(resume, arch=arch)
        if ckpt.adam is None:
            raise ValueError("Checkpoint {} has no optimiser state to resume from".format(resume))
        params, adam, start = ckpt.params, ckpt.adam, ckpt.step
        logger.info("Resuming from step {} of {}".format(start, cfg.steps))

    corpus = load_corpus(cfg)
    fb = dsp.mel_filterbank(arch.mel_config, arch.n_fft, arch.sample_rate)

    logger.info("Training for {} steps, batch {}, distortion layer {}".format(
        cfg.steps - start, cfg.batch_size, 'on' if cfg.use_distortion_layer else 'off'))
    rows = []
    for step in tqdm(range(start, cfg.steps), disable=not progress):
        picks = step_rng(cfg.seed, PURPOSE_DATA, step).choice(len(corpus), size=cfg.batch_size, replace=False)
        rng_wm = step_rng(cfg.seed, PURPOSE_WATERMARK, step)
        row = _train_step(step, [corpus[i] for i in picks], cfg, params, adam, fb, rng_wm)
        logger.debug("step {}: ".format(step) +
                     ' '.join('{}={:.6g}'.format(k, v) for k, v in zip(TRAINING_LOG_HEADER[1:], row[1:])))
        rows.append(row)

    logger.info("Finished training at step {}".format(cfg.steps))
    return TrainResult(params, adam, history_from_rows(rows), max(cfg.steps, start))
