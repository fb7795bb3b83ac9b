# Copyright 2026 The FORTRESS Simulator Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License"). You
# may not use this file except in compliance with the License. A copy of
# the License is located at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# or in the "license" file accompanying this file. This file is
# distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF
# ANY KIND, either express or implied. See the License for the specific
# language governing permissions and limitations under the License.
"""Versioned checkpoints of the global model and server state

A checkpoint is a numpy ``.npz`` archive. Parameter arrays are stored under
``params/<field>`` and any extra state under ``state/<name>``. The entry
``__meta__`` holds a JSON document with the format version, the writer, the
round, the config hash, every array's shape and a sha256 over all array
contents. Files are written to a temporary name and renamed into place.
"""
import collections
import hashlib
import io
import json
import logging
import os
import random
import string
import zipfile

import numpy as np

from fortress.constants import CHECKPOINT_FORMAT_VERSION
from fortress.constants import USER_AGENT
from fortress.encoder import ModelParams
from fortress.exceptions import CheckpointError
from fortress.exceptions import ChecksumError
from fortress.exceptions import ConfigHashMismatchError
from fortress.exceptions import ShapeMismatchError


logger = logging.getLogger(__name__)

META_KEY = '__meta__'
PARAMS_PREFIX = 'params/'
STATE_PREFIX = 'state/'


Checkpoint = collections.namedtuple(
    'Checkpoint', ['params', 'round_num', 'config_hash', 'state'])


def random_file_extension(num_digits=8):
    return ''.join(random.choice(string.hexdigits) for _ in range(num_digits))


def checkpoint_filename(round_num):
    return 'round_%05d.npz' % round_num


def _checksum(arrays):
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name])
        digest.update(name.encode('utf-8'))
        digest.update(array.dtype.str.encode('ascii'))
        digest.update(repr(array.shape).encode('ascii'))
        digest.update(array.tobytes())
    return digest.hexdigest()


def save_checkpoint(params, path, config_hash=None, round_num=None,
                    state=None):
    """Write ``params`` and optional server state to ``path``

    :type params: fortress.encoder.ModelParams
    :param config_hash: Hash of the config that produced ``params``.
    :param round_num: The last completed round.
    :param state: dict of name to numpy array saved alongside.
    """
    arrays = {}
    for name, array in params.items():
        arrays[PARAMS_PREFIX + name] = array
    for name, value in (state or {}).items():
        arrays[STATE_PREFIX + name] = np.asarray(value)
    meta = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'writer': USER_AGENT,
        'round': round_num,
        'config_hash': config_hash,
        'shapes': dict((name, list(a.shape)) for name, a in arrays.items()),
        'sha256': _checksum(arrays),
    }
    arrays[META_KEY] = np.array(json.dumps(meta, sort_keys=True))

    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)
    temp_path = '%s.%s' % (path, random_file_extension())
    try:
        with io.open(temp_path, 'wb') as f:
            np.savez(f, **arrays)
        os.replace(temp_path, path)
    except Exception:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.debug('Wrote checkpoint for round %s to %s', round_num, path)


def _read_arrays(path):
    try:
        with np.load(path, allow_pickle=False) as archive:
            return dict((name, archive[name]) for name in archive.files)
    except (zipfile.BadZipFile, ValueError, EOFError, KeyError,
            OSError) as e:
        if isinstance(e, (FileNotFoundError, IsADirectoryError)):
            raise CheckpointError('Cannot read checkpoint %s: %s' % (
                path, e))
        raise ChecksumError('Checkpoint %s is corrupted: %s' % (path, e))


def load_checkpoint(path, expected_hash=None, like=None):
    """Read a checkpoint written by :func:`save_checkpoint`

    :param expected_hash: When given, refuse a checkpoint written under a
        different config hash.
    :param like: ModelParams whose shapes the loaded params must match.

    :rtype: Checkpoint
    :raises ChecksumError: If the file is unreadable or its contents do not
        match the stored checksum.
    :raises ConfigHashMismatchError: If ``expected_hash`` differs.
    :raises ShapeMismatchError: If the shapes differ from ``like``.
    """
    arrays = _read_arrays(path)
    if META_KEY not in arrays:
        raise ChecksumError('Checkpoint %s has no metadata' % path)
    try:
        meta = json.loads(str(arrays.pop(META_KEY)))
    except ValueError as e:
        raise ChecksumError('Checkpoint %s has unreadable metadata: %s' % (
            path, e))
    if meta.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            'Checkpoint %s has format version %s, expected %s' % (
                path, meta.get('format_version'),
                CHECKPOINT_FORMAT_VERSION))
    if _checksum(arrays) != meta.get('sha256'):
        raise ChecksumError('Checksum mismatch in checkpoint %s' % path)
    if expected_hash is not None and meta.get('config_hash') != expected_hash:
        raise ConfigHashMismatchError(
            'Checkpoint %s was written for config %s, current config is %s' % (
                path, meta.get('config_hash'), expected_hash))

    fields = {}
    for name in ModelParams.FIELDS:
        key = PARAMS_PREFIX + name
        if key not in arrays:
            raise CheckpointError('Checkpoint %s is missing %s' % (path, key))
        fields[name] = arrays[key]
    params = ModelParams(**fields)
    if like is not None and like.shapes != params.shapes:
        raise ShapeMismatchError(
            'Checkpoint %s has shapes %s, expected %s' % (
                path, params.shapes, like.shapes))
    state = dict(
        (name[len(STATE_PREFIX):], array) for name, array in arrays.items()
        if name.startswith(STATE_PREFIX))
    return Checkpoint(params, meta.get('round'), meta.get('config_hash'),
                      state)
