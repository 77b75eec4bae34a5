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
"""Save and load checkpoints, training histories and CSV reports

Checkpoint layout (all integers little-endian)::

    b'TWM1'                     magic
    uint16                      format version
    uint32 + bytes              architecture descriptor, canonical JSON
    uint64                      training step
    uint32                      number of parameter blocks
    per block:
      uint16 + bytes            name, UTF-8
      uint8                     ndim
      uint32 * ndim             dims
      float32 * prod(dims)      values
    uint8                       1 if Adam state follows, else 0
    Adam state:
      uint64                    step counter t
      float64 * 4               lr, beta1, beta2, eps
      per block, same order:    float32 m values, then float32 v values
"""
from collections import namedtuple, OrderedDict
import csv
from datetime import datetime
import json
import math
import struct

import numpy as np
import h5py

from . import logger
from . import __version__
from .model import Architecture, ModelParams, parameter_shapes
from .optim import AdamState

MAGIC = b'TWM1'
FORMAT_VERSION = 1

_DATEFORMAT = '%Y-%m-%d %H:%M:%S'

TRAINING_LOG_HEADER = ['step', 'L_e', 'L_adv', 'L_d', 'L_w', 'L_w_hat', 'L_total']
ROBUSTNESS_HEADER = ['distortion', 'snr_db', 'acc', 'n_clips', 'error']
CROP_HEADER = ['position', 'ratio', 'acc', 'n_clips']
MASK_HEADER = ['band', 'start', 'width', 'spec_acc', 'wave_acc', 'snr_db']
MASK_RATIO_HEADER = ['ratio', 'spec_acc', 'wave_acc', 'snr_db']
OVERWRITE_HEADER = ['wm1_acc', 'wm2_acc', 'snr_db', 'n_clips']
DBWM_HEADER = ['model', 'clean_acc', 'dp_acc', 'snr_db', 'n_clips']


class CheckpointError(IOError):
    """Base class for unreadable checkpoints"""


class BadMagicError(CheckpointError):
    """File does not start with b'TWM1'"""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported"""


class DescriptorMismatchError(CheckpointError):
    """Stored architecture differs from the requested one"""


class TruncatedCheckpointError(CheckpointError):
    """File ends before the checkpoint is complete"""


Checkpoint = namedtuple('Checkpoint', ['params', 'adam', 'step'])

TrainingHistory = namedtuple('TrainingHistory', TRAINING_LOG_HEADER)


def _descriptor_bytes(arch):
    return json.dumps(arch.descriptor(), sort_keys=True, separators=(',', ':')).encode('utf-8')


def _f4(array):
    return np.ascontiguousarray(array, dtype='<f4').tobytes()


def save_checkpoint(path, params, adam=None, step=0):
    """Write parameters and optional optimiser state

    Parameters
    ----------
    path : str
    params : ModelParams
    adam : AdamState, optional
    step : int, optional
      training steps taken
    """
    chunks = [MAGIC, struct.pack('<H', FORMAT_VERSION)]
    descriptor = _descriptor_bytes(params.arch)
    chunks.append(struct.pack('<I', len(descriptor)))
    chunks.append(descriptor)
    chunks.append(struct.pack('<QI', step, len(params)))
    for name, t in params.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', t.ndim))
        chunks.append(struct.pack('<{}I'.format(t.ndim), *t.shape))
        chunks.append(_f4(t.data))
    if adam is None:
        chunks.append(struct.pack('<B', 0))
    else:
        chunks.append(struct.pack('<BQ4d', 1, adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps))
        for name, t in params.items():
            chunks.append(_f4(adam.m.get(name, np.zeros(t.shape))))
            chunks.append(_f4(adam.v.get(name, np.zeros(t.shape))))

    logger.info("Saving checkpoint at step {} to {}".format(step, path))
    with open(path, 'wb') as f:
        f.write(b''.join(chunks))


class _Reader(object):
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError("{}: file ends inside {}".format(self.path, what))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return values if len(values) > 1 else values[0]

    def floats(self, shape, what):
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(shape)


def load_checkpoint(path, arch=None):
    """Read a checkpoint written by :func:`save_checkpoint`

    Parameters
    ----------
    path : str
    arch : Architecture, optional
      when given, the stored architecture must equal it

    Returns
    -------
    checkpoint : Checkpoint
      params (float32 ModelParams), adam (AdamState or None) and step

    Raises
    ------
    BadMagicError, VersionMismatchError, DescriptorMismatchError, TruncatedCheckpointError
    """
    logger.info("Loading checkpoint from {}".format(path))
    with open(path, 'rb') as f:
        r = _Reader(f.read(), path)

    magic = r.take(4, 'magic')
    if magic != MAGIC:
        raise BadMagicError("{}: bad magic {!r}, expected {!r}".format(path, magic, MAGIC))
    version = r.unpack('<H', 'format version')
    if version != FORMAT_VERSION:
        raise VersionMismatchError("{}: checkpoint format {} is not supported (need {})"
                                   "".format(path, version, FORMAT_VERSION))
    raw = r.take(r.unpack('<I', 'descriptor length'), 'descriptor')
    try:
        stored = Architecture.from_descriptor(json.loads(raw.decode('utf-8')))
    except (ValueError, TypeError) as e:
        raise DescriptorMismatchError("{}: unusable architecture descriptor ({})".format(path, e))
    if arch is not None and stored != arch:
        raise DescriptorMismatchError("{}: stored architecture {} does not match requested {}"
                                      "".format(path, dict(stored.descriptor()), dict(arch.descriptor())))

    step, n_blocks = r.unpack('<QI', 'header')
    expected = parameter_shapes(stored)
    arrays = OrderedDict()
    for _ in range(n_blocks):
        name = r.take(r.unpack('<H', 'block name length'), 'block name').decode('utf-8')
        ndim = r.unpack('<B', 'block rank')
        shape = tuple(struct.unpack('<{}I'.format(ndim), r.take(4 * ndim, 'block dims')))
        if expected.get(name) != shape:
            raise DescriptorMismatchError("{}: block '{}' of shape {} does not belong to the "
                                          "stored architecture".format(path, name, shape))
        arrays[name] = r.floats(shape, "block '{}'".format(name))
    if list(arrays) != list(expected):
        raise DescriptorMismatchError("{}: parameter blocks do not match the stored architecture"
                                      "".format(path))

    adam = None
    if r.unpack('<B', 'optimiser flag'):
        t, lr, beta1, beta2, eps = r.unpack('<Q4d', 'optimiser header')
        adam = AdamState(lr, beta1, beta2, eps)
        adam.t = t
        for name, a in arrays.items():
            adam.m[name] = r.floats(a.shape, "first moment of '{}'".format(name))
            adam.v[name] = r.floats(a.shape, "second moment of '{}'".format(name))
    if r.pos != len(r.data):
        raise CheckpointError("{}: {} unexpected trailing bytes".format(path, len(r.data) - r.pos))

    return Checkpoint(ModelParams.from_arrays(stored, arrays), adam, step)


def save_history(filename, history):
    """Save a training history to HDF5

    Parameters
    ----------
    filename : str
      must not yet exist; '.hdf5' is appended if not present
    history : TrainingHistory
    """
    if not filename.endswith('.hdf5'):
        filename += '.hdf5'

    logger.debug("Saving training history to {}".format(filename))
    with h5py.File(filename, 'w-') as f:
        f.attrs['timbrewm_version'] = __version__
        f.attrs['creation_date'] = datetime.now().strftime(_DATEFORMAT)
        for column in TRAINING_LOG_HEADER:
            f[column] = np.asarray(getattr(history, column))


def load_history(filename):
    """Load a training history from HDF5

    Returns
    -------
    history : TrainingHistory
    """
    if not filename.endswith('.hdf5'):
        filename += '.hdf5'

    logger.debug("Loading training history from {}".format(filename))
    with h5py.File(filename, 'r') as f:
        logger.debug("History from {}".format(datetime.strptime(f.attrs['creation_date'], _DATEFORMAT)))
        logger.debug("Saved with version: {}".format(f.attrs['timbrewm_version']))
        columns = [f[column][()] for column in TRAINING_LOG_HEADER]

    return TrainingHistory(*columns)


def history_from_rows(rows):
    """Column arrays from per-step rows in TRAINING_LOG_HEADER order"""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, len(TRAINING_LOG_HEADER))
    return TrainingHistory(rows[:, 0].astype(np.int64), *(rows[:, i] for i in range(1, rows.shape[1])))


def concatenate_histories(*histories):
    """Join histories of a run and its resumptions, in order

    Step indices are not checked.
    """
    return TrainingHistory(*(np.concatenate([getattr(h, column) for h in histories])
                             for column in TRAINING_LOG_HEADER))


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return '{:.6f}'.format(value)
    return '' if value is None else str(value)


def write_csv(path, header, rows):
    """Write rows (sequences or namedtuples) under a fixed header"""
    logger.info("Writing {} rows to {}".format(len(rows), path))
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("Row {} does not fit header {}".format(row, header))
            writer.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Header and rows of a CSV report, values left as strings"""
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]
