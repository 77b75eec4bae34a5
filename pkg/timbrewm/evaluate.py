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
"""Evaluation reports over a held-out test set

Every report embeds one random watermark per test clip, seeded by
(seed, clip index), then distorts, extracts and averages.
"""
from collections import namedtuple
import math

import numpy as np
from tqdm import tqdm

from . import logger
from . import dsp
from .audio_io import synth_test_signal
from .distortion import DistortionSpec, apply, band_mask_magnitude, CROP_POSITIONS
from .metrics import snr, bit_acc
from .model import WatermarkBits, embed_audio, extract_audio, extract_spectrogram, detect

# test clip j of seed s is synthesised from TEST_SEED_BASE + s * 10000 + j,
# far away from the training corpus seeds
TEST_SEED_BASE = 10 ** 9

PURPOSE_WM1 = 0
PURPOSE_WM2 = 1
PURPOSE_NOISE = 2

EvalRow = namedtuple('EvalRow', ['distortion', 'snr_db', 'acc', 'n_clips', 'error'])
CropRow = namedtuple('CropRow', ['position', 'ratio', 'acc', 'n_clips'])
MaskRow = namedtuple('MaskRow', ['band', 'start', 'width', 'spec_acc', 'wave_acc', 'snr_db'])
MaskRatioRow = namedtuple('MaskRatioRow', ['ratio', 'spec_acc', 'wave_acc', 'snr_db'])
OverwriteReport = namedtuple('OverwriteReport', ['wm1_acc', 'wm2_acc', 'snr_db', 'n_clips'])
DbwmRow = namedtuple('DbwmRow', ['model', 'clean_acc', 'dp_acc', 'snr_db', 'n_clips'])
DetectionReport = namedtuple('DetectionReport', ['marked_rate', 'clean_rate', 'clean_segment_acc', 'n_clips'])


def make_test_set(n_clips=32, seed=0, clip_seconds=1.0, sample_rate=22050):
    """Held-out synthetic clips"""
    if n_clips < 1:
        raise ValueError("The test set needs at least one clip, got {}".format(n_clips))
    return [synth_test_signal(TEST_SEED_BASE + seed * 10000 + j, clip_seconds, sample_rate)
            for j in range(n_clips)]


def default_robustness_specs():
    """Resampling, amplitude, requantisation, median, filter and noise rows, then DP"""
    specs = [DistortionSpec('resample', {'rate': 16000}),
             DistortionSpec('resample', {'rate': 8000})]
    specs += [DistortionSpec('amplitude_scale', {'p': p}) for p in (0.2, 0.4, 0.6, 0.8)]
    specs.append(DistortionSpec('requantize', {'bits': 8}))
    specs += [DistortionSpec('median_filter', {'k': k}) for k in (5, 15, 25, 35)]
    specs.append(DistortionSpec('low_pass', {'fc': 2000}))
    specs.append(DistortionSpec('high_pass', {'fc': 500}))
    specs += [DistortionSpec('gaussian_noise', {'snr_db': d}) for d in (20, 25, 30, 35, 40)]
    specs.append(DistortionSpec('dp_pipeline'))
    return specs


def _rng(seed, purpose, index):
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, index]))


def clip_watermark(seed, index, n, purpose=PURPOSE_WM1):
    """Watermark embedded into test clip `index`"""
    return WatermarkBits.random(n, _rng(seed, purpose, index))


def embed_test_set(params, clips, seed=0):
    """(watermark, watermarked clip) per test clip"""
    frozen = params.frozen()
    marked = []
    for i, clip in enumerate(tqdm(clips, desc='embedding', leave=False)):
        w = clip_watermark(seed, i, frozen.arch.wm_length)
        marked.append((w, embed_audio(clip, w, frozen)))
    return marked


def _mean_db(values):
    values = list(values)
    if any(math.isinf(v) for v in values):
        return math.inf
    return float(np.mean(values))


def _robustness_row(params, marked, spec, seed):
    """One table row; distortion errors become an error marker"""
    arch = params.arch
    snrs, accs = [], []
    try:
        for i, (w, a_w) in enumerate(marked):
            distorted = apply(a_w, spec.with_seed(int(_rng(seed, PURPOSE_NOISE, i).integers(2 ** 31))),
                              arch.stft_config, arch.mel_config)
            if distorted.n_samples == a_w.n_samples:
                snrs.append(snr(a_w, distorted))
            accs.append(bit_acc(w, extract_audio(distorted, params)))
    except (ValueError, ArithmeticError) as e:
        logger.warning("{} failed: {}".format(spec.label, e))
        return EvalRow(spec.label, math.nan, math.nan, len(marked), str(e))

    row = EvalRow(spec.label, _mean_db(snrs) if snrs else math.nan, float(np.mean(accs)), len(marked), '')
    logger.info("{}: snr {:.4f} dB, acc {:.4f}".format(row.distortion, row.snr_db, row.acc))
    return row


def robustness_table(params, clips, specs=None, seed=0, client=None):
    """Accuracy and SNR after each distortion

    Parameters
    ----------
    params : ModelParams
    clips : list of AudioClip
      non-empty test set
    specs : list of DistortionSpec, optional
      defaults to :func:`default_robustness_specs`
    seed : int
      selects the watermarks and noise
    client : dask distributed Client, optional
      if given, rows are computed in parallel as a dask job using this
      client; results are identical to the sequential run

    Returns
    -------
    rows : list of EvalRow
      one per spec, in order
    """
    if not clips:
        raise ValueError("robustness_table needs a non-empty test set")
    specs = default_robustness_specs() if specs is None else specs
    frozen = params.frozen()
    marked = embed_test_set(frozen, clips, seed)
    logger.info("Evaluating {} distortions over {} clips".format(len(specs), len(clips)))

    if client is None:
        return [_robustness_row(frozen, marked, spec, seed) for spec in tqdm(specs)]
    return _dask_rows(client, frozen, marked, specs, seed)


def _dask_rows(client, params, marked, specs, seed):
    import dask

    # distribute the model and test set to all workers at start
    future_params = client.scatter(params, broadcast=True)
    # a bare list would be scattered element by element
    future_marked, = client.scatter([marked], broadcast=True)

    rows = [dask.delayed(_robustness_row)(future_params, future_marked, spec, seed) for spec in specs]
    return client.compute(dask.delayed(list)(rows)).result()


def crop_curve(params, clips, ratios, positions=CROP_POSITIONS, seed=0):
    """Accuracy after deleting a fraction of each clip

    A ratio of 0 means no crop.

    Returns
    -------
    rows : list of CropRow
      positions outer, ratios inner
    """
    frozen = params.frozen()
    marked = embed_test_set(frozen, clips, seed)
    rows = []
    for position in positions:
        for ratio in ratios:
            accs = []
            for w, a_w in marked:
                if ratio > 0:
                    a_w = apply(a_w, DistortionSpec('crop', {'ratio': ratio, 'position': position}))
                accs.append(bit_acc(w, extract_audio(a_w, frozen)))
            rows.append(CropRow(position, float(ratio), float(np.mean(accs)), len(marked)))
            logger.info("crop {} {:.2f}: acc {:.4f}".format(position, ratio, rows[-1].acc))
    return rows


def _masked_scores(params, marked, start, width):
    """Spectrogram and re-analysed accuracy plus SNR for one band"""
    cfg = params.arch.stft_config
    spec_accs, wave_accs, snrs = [], [], []
    for w, a_w in marked:
        spec = dsp.stft(a_w, cfg)
        masked = band_mask_magnitude(spec.magnitude, start, width)
        spec_accs.append(bit_acc(w, extract_spectrogram(masked, params)))
        audio = dsp.istft(spec.with_magnitude(masked), sample_rate=a_w.sample_rate)
        wave_accs.append(bit_acc(w, extract_audio(audio, params)))
        snrs.append(snr(a_w, audio))
    return float(np.mean(spec_accs)), float(np.mean(wave_accs)), _mean_db(snrs)


def mask_study(params, clips, width=0.1, seed=0):
    """Accuracy when one frequency band at a time is zeroed

    The spectrum is split into round(1 / width) contiguous bands; the last
    band is cut at the Nyquist bin.

    Returns
    -------
    rows : list of MaskRow
    """
    if not 0 < width <= 1:
        raise ValueError("band width must lie in (0, 1], got {}".format(width))
    frozen = params.frozen()
    marked = embed_test_set(frozen, clips, seed)
    rows = []
    for band in range(int(round(1.0 / width))):
        start = band * width
        band_width = min(width, 1.0 - start)
        scores = _masked_scores(frozen, marked, start, band_width)
        rows.append(MaskRow(band, start, band_width, *scores))
        logger.info("band {} at {:.2f}: spec acc {:.4f}, wave acc {:.4f}".format(band, start, *scores[:2]))
    return rows


def mask_ratio_curve(params, clips, ratios, seed=0):
    """Accuracy when the top `ratio` of the spectrum is zeroed"""
    frozen = params.frozen()
    marked = embed_test_set(frozen, clips, seed)
    rows = []
    for ratio in ratios:
        if not 0 < ratio <= 1:
            raise ValueError("mask ratio must lie in (0, 1], got {}".format(ratio))
        rows.append(MaskRatioRow(float(ratio), *_masked_scores(frozen, marked, 1.0 - ratio, ratio)))
    return rows


def overwrite_eval(params, clips, seed=0, wm1=None, wm2=None):
    """Embed a second watermark with the same model and see which survives

    Parameters
    ----------
    wm1, wm2 : WatermarkBits, optional
      fixed payloads; random per clip when omitted

    Returns
    -------
    report : OverwriteReport
      snr_db compares the doubly watermarked audio with the original
    """
    frozen = params.frozen()
    n = frozen.arch.wm_length
    acc1, acc2, snrs = [], [], []
    for i, clip in enumerate(tqdm(clips, desc='overwriting', leave=False)):
        w1 = wm1 if wm1 is not None else clip_watermark(seed, i, n, PURPOSE_WM1)
        w2 = wm2 if wm2 is not None else clip_watermark(seed, i, n, PURPOSE_WM2)
        twice = embed_audio(embed_audio(clip, w1, frozen), w2, frozen)
        found = extract_audio(twice, frozen)
        acc1.append(bit_acc(w1, found))
        acc2.append(bit_acc(w2, found))
        snrs.append(snr(clip, twice))
    report = OverwriteReport(float(np.mean(acc1)), float(np.mean(acc2)), _mean_db(snrs), len(clips))
    logger.info("overwrite: wm1 acc {:.4f}, wm2 acc {:.4f}".format(report.wm1_acc, report.wm2_acc))
    return report


def _dbwm_row(name, params, clips, seed, gl_iters):
    frozen = params.frozen()
    arch = frozen.arch
    dp = DistortionSpec('dp_pipeline', {'gl_iters': gl_iters})
    clean, distorted, snrs = [], [], []
    for clip, (w, a_w) in zip(clips, embed_test_set(frozen, clips, seed)):
        clean.append(bit_acc(w, extract_audio(a_w, frozen)))
        attacked = apply(a_w, dp, arch.stft_config, arch.mel_config)
        distorted.append(bit_acc(w, extract_audio(attacked, frozen)))
        snrs.append(snr(clip, a_w))
    return DbwmRow(name, float(np.mean(clean)), float(np.mean(distorted)), _mean_db(snrs), len(clips))


def dbwm_comparison(full_params, dbwm_params, clips, seed=0, gl_iters=32):
    """Clean and DP accuracy of the full and distortion-blind models"""
    rows = [_dbwm_row('full', full_params, clips, seed, gl_iters),
            _dbwm_row('dbwm', dbwm_params, clips, seed, gl_iters)]
    for row in rows:
        logger.info("{}: clean acc {:.4f}, dp acc {:.4f}".format(row.model, row.clean_acc, row.dp_acc))
    return rows


def detection_study(params, clips, seed=0, threshold=0.9, segments=5):
    """Detection rate on watermarked and on untouched clips

    Returns
    -------
    report : DetectionReport
      clean_segment_acc is the mean per-segment accuracy on untouched
      clips, about 0.5 when the extractor is guessing
    """
    frozen = params.frozen()
    marked_hits, clean_hits, clean_accs = 0, 0, []
    for clip, (w, a_w) in zip(clips, embed_test_set(frozen, clips, seed)):
        marked_hits += detect(a_w, w, frozen, threshold, segments).attack_detected
        result = detect(clip, w, frozen, threshold, segments)
        clean_hits += result.attack_detected
        clean_accs.extend(result.per_segment_acc)
    n = len(clips)
    return DetectionReport(marked_hits / float(n), clean_hits / float(n), float(np.mean(clean_accs)), n)
