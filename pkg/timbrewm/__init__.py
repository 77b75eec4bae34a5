"""
timbrewm
Timbre watermarking of speech that survives voice cloning
"""
from ._version import __version__

import sys
from loguru import logger


def enable_debug_logging():
    """Increase amount of logging"""
    logger.remove()
    logger.add(sys.stderr, format="{time} {level} {message}", level="DEBUG")


def disable_debug_logging():
    """Use a normal amount of logging"""
    logger.remove()
    logger.add(sys.stderr, format="{time} {level} {message}", level="INFO")


disable_debug_logging()


from .audio_io import AudioClip, read_wav, write_wav, resample, synth_test_signal
from . import autodiff
from . import layers
from . import optim
from . import dsp
from . import metrics
from .model import (Architecture, ModelParams, WatermarkBits, LossWeights,
                    init_params, embed_audio, extract_audio, detect)
from . import distortion
from .results_io import save_checkpoint, load_checkpoint, save_history, load_history
from .trainer import TrainConfig, train
from . import evaluate
from . import cli
