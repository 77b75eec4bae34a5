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
"""Command line entry to timbrewm

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
divergence.
"""
import argparse
from collections import OrderedDict
import os

import yaml

from . import logger
from . import enable_debug_logging
from . import __version__
from .audio_io import read_wav, write_wav, resample, synth_test_signal
from .autodiff import DivergenceError
from .distortion import DistortionSpec, DistortionSpecError, parse_spec, apply_chain, chain_label, CROP_POSITIONS
from .model import Architecture, LossWeights, WatermarkBits, WatermarkLengthError, embed_audio, extract_audio, detect
from .results_io import (save_checkpoint, load_checkpoint, save_history, write_csv, TRAINING_LOG_HEADER,
                         ROBUSTNESS_HEADER, CROP_HEADER, MASK_HEADER, MASK_RATIO_HEADER, OVERWRITE_HEADER,
                         DBWM_HEADER)
from .trainer import TrainConfig, train, CORPUS_STRIDE
from . import evaluate
from .metrics import snr, format_db

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_SETTINGS_FILE = os.path.join(os.path.dirname(__file__), 'data', 'params.yaml')

DEFAULT_CROP_RATIOS = '0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9'


class UsageError(ValueError):
    """Bad flags, settings or payload"""


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


# key: (type, check, description of the valid range, default)
SETTINGS = OrderedDict([
    ('seed', (int, _non_negative, 'an integer >= 0', 0)),
    ('sample_rate', (int, _positive, 'a positive integer', 22050)),
    ('clip_seconds', (float, _positive, 'a positive number', 0.5)),
    ('n_clips', (int, _positive, 'a positive integer', 64)),
    ('batch_size', (int, _positive, 'a positive integer', 2)),
    ('steps', (int, _positive, 'a positive integer', 2000)),
    ('use_distortion_layer', (bool, None, 'true or false', True)),
    ('gl_train_iters', (int, _non_negative, 'an integer >= 0', 8)),
    ('gl_eval_iters', (int, _positive, 'a positive integer', 32)),
    ('wm_length', (int, lambda x: 1 <= x <= 256, 'an integer from 1 to 256', 10)),
    ('lambda_e', (float, _non_negative, 'a number >= 0', 1.0)),
    ('lambda_adv', (float, _non_negative, 'a number >= 0', 0.01)),
    ('lambda_w', (float, _non_negative, 'a number >= 0', 0.01)),
    ('learning_rate', (float, _positive, 'a positive number', 2e-5)),
    ('n_fft', (int, lambda x: x >= 2, 'an integer >= 2', 1024)),
    ('hop', (int, _positive, 'a positive integer', 256)),
    ('win_len', (int, _positive, 'a positive integer', 1024)),
    ('n_mels', (int, _positive, 'a positive integer', 80)),
    ('f_min', (float, _non_negative, 'a number >= 0', 0.0)),
    ('f_max', (float, _positive, 'a positive number or null', None)),
    ('hidden_channels', (int, _positive, 'a positive integer', 8)),
    ('skip_concat', (bool, None, 'true or false', True)),
    ('data_dir', (str, None, 'a directory or null', None)),
    ('test_clips', (int, _positive, 'a positive integer', 32)),
    ('test_seed', (int, _non_negative, 'an integer >= 0', 0)),
])

# keys that may be left null
_NULLABLE = {'f_max', 'data_dir'}


def default_settings():
    return OrderedDict((key, spec[3]) for key, spec in SETTINGS.items())


def _check_value(key, value, source):
    typ, check, valid, _ = SETTINGS[key]
    if value is None:
        if key in _NULLABLE:
            return None
        raise UsageError("{}: '{}' must be {}, got null".format(source, key, valid))
    if typ is bool:
        ok = isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, like 2e-5, as strings
            try:
                value = float(value)
            except ValueError:
                pass
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, str)
    if not ok or (check is not None and not check(value)):
        raise UsageError("{}: '{}' must be {}, got {!r}".format(source, key, valid, value))
    return typ(value)


def read_settings(fn):
    """Read YAML settings, reject unknown keys and check every value

    Parameters
    ----------
    fn : str
      settings file; keys not given keep their default

    Returns
    -------
    settings : OrderedDict
      every key of SETTINGS
    """
    if not os.path.exists(fn):
        raise UsageError("--config: settings file {} does not exist".format(fn))
    with open(fn, 'r', encoding='utf-8') as f:
        try:
            loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise UsageError("{}: not valid YAML ({})".format(fn, e))
    loaded = {} if loaded is None else loaded
    if not isinstance(loaded, dict):
        raise UsageError("{}: settings must be a mapping of key: value lines".format(fn))
    unknown = set(loaded) - set(SETTINGS)
    if unknown:
        raise UsageError("{}: unknown setting(s) {}".format(fn, sorted(unknown)))

    settings = default_settings()
    for key, value in loaded.items():
        settings[key] = _check_value(key, value, fn)
    logger.debug("Read settings from {}".format(fn))
    return settings


def merge_flags(settings, args):
    """Settings with every flag that was given on the command line applied"""
    merged = OrderedDict(settings)
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = _check_value(key, value, '--' + key.replace('_', '-'))
    return merged


def make_architecture(settings):
    try:
        return Architecture(wm_length=settings['wm_length'], hidden_channels=settings['hidden_channels'],
                            skip_concat=settings['skip_concat'], n_fft=settings['n_fft'], hop=settings['hop'],
                            win_len=settings['win_len'], sample_rate=settings['sample_rate'],
                            n_mels=settings['n_mels'], f_min=settings['f_min'], f_max=settings['f_max'])
    except ValueError as e:
        raise UsageError("inconsistent settings: {}".format(e))


def make_train_config(settings):
    arch = make_architecture(settings)
    try:
        weights = LossWeights(settings['lambda_e'], settings['lambda_adv'], settings['lambda_w'])
        return TrainConfig(seed=settings['seed'], clip_seconds=settings['clip_seconds'],
                           batch_size=settings['batch_size'], steps=settings['steps'],
                           n_clips=settings['n_clips'], use_distortion_layer=settings['use_distortion_layer'],
                           gl_train_iters=settings['gl_train_iters'], weights=weights,
                           wm_length=settings['wm_length'], learning_rate=settings['learning_rate'],
                           data_dir=settings['data_dir'], arch=arch)
    except ValueError as e:
        raise UsageError("inconsistent settings: {}".format(e))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("{}: {}".format(self.prog, message))


def _add_settings_flags(p, *keys):
    for key in keys:
        flag = '--' + key.replace('_', '-')
        typ = SETTINGS[key][0]
        if typ is bool:
            continue
        p.add_argument(flag, dest=key, type=typ, default=None, help="overrides '{}' in the settings".format(key))


def _add_model(p):
    p.add_argument('--model', required=True, help='checkpoint file')


def _add_payload(p):
    p.add_argument('--wm', help='watermark as a bitstring, e.g. 1011010010')
    p.add_argument('--wm-text', help='watermark derived from the SHA-256 of this text')


def _add_test_set(p):
    p.add_argument('--out', required=True, help='CSV report to write')
    _add_settings_flags(p, 'test_clips', 'test_seed', 'clip_seconds', 'seed')


def build_parser():
    """The argparse parser of every command"""
    parser = _Parser(prog='timbrewm', description='Timbre watermarking of speech')
    parser.add_argument('--config', default=DEFAULT_SETTINGS_FILE, help='YAML settings file')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    p = sub.add_parser('synth-data', help='write synthetic speech-like WAV clips')
    p.add_argument('--out', required=True, help='directory to write clip_NNNN.wav files into')
    _add_settings_flags(p, 'n_clips', 'clip_seconds', 'sample_rate', 'seed')

    p = sub.add_parser('train', help='train embedder, extractor and discriminator')
    p.add_argument('--out', required=True, help='checkpoint to write')
    p.add_argument('--resume', help='checkpoint with optimiser state to continue from')
    p.add_argument('--log', help='CSV training log to write')
    p.add_argument('--history', help='HDF5 training history to write')
    p.add_argument('--distortion-layer', dest='use_distortion_layer', action='store_const', const=True,
                   default=None, help='train through the distortion layer')
    p.add_argument('--no-distortion-layer', dest='use_distortion_layer', action='store_const', const=False,
                   default=None, help='train the distortion-blind ablation')
    p.add_argument('--skip-concat', dest='skip_concat', action='store_const', const=True,
                   default=None, help='concatenate the carrier into the embedder input')
    p.add_argument('--no-skip-concat', dest='skip_concat', action='store_const', const=False,
                   default=None, help='do not concatenate the carrier into the embedder input')
    p.add_argument('--quiet', action='store_true', help='no progress bar')
    _add_settings_flags(p, 'seed', 'steps', 'batch_size', 'n_clips', 'clip_seconds', 'wm_length',
                        'gl_train_iters', 'learning_rate', 'hidden_channels', 'sample_rate', 'n_fft', 'hop',
                        'win_len', 'n_mels', 'lambda_e', 'lambda_adv', 'lambda_w', 'data_dir')

    p = sub.add_parser('embed', help='watermark a WAV file')
    _add_model(p)
    _add_payload(p)
    p.add_argument('input', help='WAV file to watermark')
    p.add_argument('output', help='watermarked WAV file to write')

    p = sub.add_parser('extract', help='decode the watermark of a WAV file')
    _add_model(p)
    p.add_argument('input', help='WAV file to decode')

    p = sub.add_parser('detect', help='decide whether a WAV file carries a watermark')
    _add_model(p)
    _add_payload(p)
    p.add_argument('--threshold', type=float, default=0.9, help='per-segment accuracy needed')
    p.add_argument('--segments', type=int, default=5, help='number of segments')
    p.add_argument('input', help='WAV file to check')

    p = sub.add_parser('attack-sim', help='apply distortions to a WAV file')
    p.add_argument('--pipeline', required=True, help="distortions, e.g. 'dp' or 'low_pass:fc=2000+normalize'")
    p.add_argument('input', help='WAV file to distort')
    p.add_argument('output', help='distorted WAV file to write')
    _add_settings_flags(p, 'seed', 'gl_eval_iters', 'n_fft', 'hop', 'win_len', 'n_mels')

    p = sub.add_parser('eval-robustness', help='accuracy and SNR after each distortion')
    _add_model(p)
    _add_test_set(p)
    _add_settings_flags(p, 'gl_eval_iters')
    p.add_argument('--spec', action='append', help='distortion row (repeatable); default: the standard table')
    p.add_argument('--scheduler', help='address of a dask scheduler to compute rows on')

    p = sub.add_parser('eval-crop', help='accuracy after cropping')
    _add_model(p)
    _add_test_set(p)
    p.add_argument('--ratios', default=DEFAULT_CROP_RATIOS, help='comma separated crop ratios')
    p.add_argument('--positions', default=','.join(CROP_POSITIONS), help='comma separated crop positions')

    p = sub.add_parser('eval-mask', help='accuracy with frequency bands masked')
    _add_model(p)
    _add_test_set(p)
    p.add_argument('--width', type=float, default=0.1, help='band width as a fraction of the spectrum')
    p.add_argument('--ratios', help='mask the top fraction of the spectrum at these comma separated ratios')

    p = sub.add_parser('eval-overwrite', help='embed a second watermark over the first')
    _add_model(p)
    _add_test_set(p)
    p.add_argument('--wm1', help='first watermark bitstring; random per clip if omitted')
    p.add_argument('--wm2', help='second watermark bitstring; random per clip if omitted')

    p = sub.add_parser('eval-dbwm', help='compare with a model trained without the distortion layer')
    _add_model(p)
    p.add_argument('--dbwm-model', required=True, help='checkpoint of the distortion-blind model')
    _add_test_set(p)
    _add_settings_flags(p, 'gl_eval_iters')

    return parser


def all_flags(parser):
    """Every option string of the parser and its subcommands"""
    flags = set()
    for action in parser._actions:
        flags.update(s for s in action.option_strings if s.startswith('--'))
        if isinstance(action, argparse._SubParsersAction):
            for subparser in action.choices.values():
                flags.update(all_flags(subparser))
    return flags


def _floats(text, flag):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise UsageError("{}: expected comma separated numbers, got '{}'".format(flag, text))


def _load_model(path):
    return load_checkpoint(path).params


def _parse_bits(text, flag, n):
    try:
        w = WatermarkBits.from_string(text)
    except ValueError as e:
        raise UsageError("{}: {}".format(flag, e))
    if w.n != n:
        raise UsageError("{} has {} bits but the model embeds {}".format(flag, w.n, n))
    return w


def _payload(args, n):
    if args.wm is not None and args.wm_text is not None:
        raise UsageError("give either --wm or --wm-text, not both")
    if args.wm is not None:
        return _parse_bits(args.wm, '--wm', n)
    if args.wm_text is not None:
        return WatermarkBits.from_text(args.wm_text, n)
    raise UsageError("a watermark is needed: give --wm or --wm-text")


def _read_at_rate(path, rate):
    clip = read_wav(path)
    if clip.sample_rate != rate:
        logger.info("Resampling {} from {} Hz to {} Hz".format(path, clip.sample_rate, rate))
        clip = resample(clip, rate)
    return clip


def _pipeline(text, seed, gl_iters):
    specs = parse_spec(text, seed=seed)
    if 'gl_iters' in text:
        return specs
    return [DistortionSpec(s.kind, dict(s.params, gl_iters=gl_iters), s.seed) if s.kind == 'dp_pipeline' else s
            for s in specs]


def _test_set(settings, arch):
    return evaluate.make_test_set(settings['test_clips'], settings['test_seed'], settings['clip_seconds'],
                                  arch.sample_rate)


def cmd_synth_data(args, settings):
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    for i in range(settings['n_clips']):
        clip = synth_test_signal(settings['seed'] * CORPUS_STRIDE + i, settings['clip_seconds'],
                                 settings['sample_rate'])
        write_wav(clip, os.path.join(args.out, 'clip_{:04d}.wav'.format(i)))
    logger.info("Wrote {} clips to {}".format(settings['n_clips'], args.out))


def cmd_train(args, settings):
    cfg = make_train_config(settings)
    result = train(cfg, resume=args.resume, progress=not args.quiet)
    save_checkpoint(args.out, result.params, result.adam, result.step)
    if args.log:
        write_csv(args.log, TRAINING_LOG_HEADER, list(zip(*result.history)))
    if args.history:
        save_history(args.history, result.history)


def cmd_embed(args, settings):
    params = _load_model(args.model)
    w = _payload(args, params.arch.wm_length)
    clip = _read_at_rate(args.input, params.arch.sample_rate)
    marked = embed_audio(clip, w, params)
    write_wav(marked, args.output)
    logger.info("Embedded {} into {}".format(w.to_string(), args.output))
    print('snr_db {}'.format(format_db(snr(clip, marked))))


def cmd_extract(args, settings):
    params = _load_model(args.model)
    found = extract_audio(_read_at_rate(args.input, params.arch.sample_rate), params)
    print(found.to_string())
    print(' '.join('{:.4f}'.format(v) for v in found.soft))


def cmd_detect(args, settings):
    params = _load_model(args.model)
    w = _payload(args, params.arch.wm_length)
    clip = _read_at_rate(args.input, params.arch.sample_rate)
    result = detect(clip, w, params, threshold=args.threshold, segments=args.segments)
    print('DETECTED' if result.attack_detected else 'NOT-DETECTED')
    print(' '.join('{:.4f}'.format(acc) for acc in result.per_segment_acc))


def cmd_attack_sim(args, settings):
    arch = make_architecture(settings)
    specs = _pipeline(args.pipeline, settings['seed'], settings['gl_eval_iters'])
    clip = read_wav(args.input)
    distorted = apply_chain(clip, specs, arch.stft_config, arch.mel_config)
    write_wav(distorted, args.output)
    logger.info("Applied {} to {}".format(chain_label(specs), args.input))


def cmd_eval_robustness(args, settings):
    params = _load_model(args.model)
    clips = _test_set(settings, params.arch)
    if args.spec:
        specs = []
        for text in args.spec:
            chain = _pipeline(text, settings['seed'], settings['gl_eval_iters'])
            if len(chain) != 1:
                raise UsageError("--spec: one distortion per row, got '{}'".format(text))
            specs.extend(chain)
    else:
        specs = [DistortionSpec(s.kind, dict(s.params, gl_iters=settings['gl_eval_iters']))
                 if s.kind == 'dp_pipeline' else s for s in evaluate.default_robustness_specs()]

    client = None
    if args.scheduler:
        from distributed import Client
        client = Client(args.scheduler)
    try:
        rows = evaluate.robustness_table(params, clips, specs, seed=settings['seed'], client=client)
    finally:
        if client is not None:
            client.close()
    write_csv(args.out, ROBUSTNESS_HEADER, rows)


def cmd_eval_crop(args, settings):
    params = _load_model(args.model)
    positions = [p.strip() for p in args.positions.split(',') if p.strip()]
    unknown = set(positions) - set(CROP_POSITIONS)
    if unknown:
        raise UsageError("--positions: unknown crop position(s) {}".format(sorted(unknown)))
    ratios = _floats(args.ratios, '--ratios')
    if any(not 0 <= r < 1 for r in ratios):
        raise UsageError("--ratios: crop ratios must lie in [0, 1), got {}".format(args.ratios))
    rows = evaluate.crop_curve(params, _test_set(settings, params.arch), ratios, positions, seed=settings['seed'])
    write_csv(args.out, CROP_HEADER, rows)


def cmd_eval_mask(args, settings):
    params = _load_model(args.model)
    clips = _test_set(settings, params.arch)
    if args.ratios:
        ratios = _floats(args.ratios, '--ratios')
        if any(not 0 < r <= 1 for r in ratios):
            raise UsageError("--ratios: mask ratios must lie in (0, 1], got {}".format(args.ratios))
        write_csv(args.out, MASK_RATIO_HEADER, evaluate.mask_ratio_curve(params, clips, ratios, settings['seed']))
    else:
        if not 0 < args.width <= 1:
            raise UsageError("--width: band width must lie in (0, 1], got {}".format(args.width))
        write_csv(args.out, MASK_HEADER, evaluate.mask_study(params, clips, args.width, settings['seed']))


def cmd_eval_overwrite(args, settings):
    params = _load_model(args.model)
    n = params.arch.wm_length
    wm1 = None if args.wm1 is None else _parse_bits(args.wm1, '--wm1', n)
    wm2 = None if args.wm2 is None else _parse_bits(args.wm2, '--wm2', n)
    report = evaluate.overwrite_eval(params, _test_set(settings, params.arch), settings['seed'], wm1, wm2)
    write_csv(args.out, OVERWRITE_HEADER, [report])


def cmd_eval_dbwm(args, settings):
    full = _load_model(args.model)
    dbwm = _load_model(args.dbwm_model)
    if full.arch != dbwm.arch:
        raise UsageError("--model and --dbwm-model have different architectures")
    rows = evaluate.dbwm_comparison(full, dbwm, _test_set(settings, full.arch), settings['seed'],
                                    settings['gl_eval_iters'])
    write_csv(args.out, DBWM_HEADER, rows)


COMMANDS = {
    'synth-data': cmd_synth_data,
    'train': cmd_train,
    'embed': cmd_embed,
    'extract': cmd_extract,
    'detect': cmd_detect,
    'attack-sim': cmd_attack_sim,
    'eval-robustness': cmd_eval_robustness,
    'eval-crop': cmd_eval_crop,
    'eval-mask': cmd_eval_mask,
    'eval-overwrite': cmd_eval_overwrite,
    'eval-dbwm': cmd_eval_dbwm,
}


def main(argv=None):
    """Run one command

    Parameters
    ----------
    argv : list of str, optional
      arguments without the program name, defaults to sys.argv[1:]

    Returns
    -------
    code : int
      0 success, 1 usage error, 2 data or format error, 3 divergence
    """
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("timbrewm: choose a command from {}".format(', '.join(COMMANDS)))
        if args.verbose:
            enable_debug_logging()
        settings = merge_flags(read_settings(args.config), args)
        COMMANDS[args.command](args, settings)
    except SystemExit as e:
        # --help and --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except (UsageError, WatermarkLengthError, DistortionSpecError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DivergenceError, ArithmeticError) as e:
        logger.error(str(e))
        return EXIT_NUMERIC
    except (IOError, ValueError) as e:
        logger.error(str(e))
        return EXIT_DATA
    return EXIT_OK
