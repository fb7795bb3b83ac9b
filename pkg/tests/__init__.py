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
import hashlib
import os
import shutil
import tempfile
import unittest
from unittest import mock  # noqa: F401

import numpy as np

from fortress.config import ExperimentConfig
from fortress.config import ExperimentSettings
from fortress.config import ModelConfig
from fortress.client import ClientHyper
from fortress.data import DataConfig
from fortress.data import Dataset
from fortress.data import InteractionSequence
from fortress.data import leave_one_out_split
from fortress.encoder import ModelParams
from fortress.encoder import init_params
from fortress.futures import BoundedExecutor
from fortress.futures import NonThreadedExecutor
from fortress.futures import RoundCoordinator
from fortress.server import DefenseHyper
from fortress.subscribers import BaseSubscriber


ORIGINAL_EXECUTOR_CLS = BoundedExecutor.EXECUTOR_CLS


def setup_package():
    if is_serial_implementation():
        BoundedExecutor.EXECUTOR_CLS = NonThreadedExecutor


def teardown_package():
    BoundedExecutor.EXECUTOR_CLS = ORIGINAL_EXECUTOR_CLS


def is_serial_implementation():
    return os.environ.get('USE_SERIAL_EXECUTOR', False)


def assert_files_equal(first, second):
    first_sha = sha256_checksum(first)
    second_sha = sha256_checksum(second)
    if first_sha != second_sha:
        raise AssertionError(
            "Files are not equal: %s(sha256=%s) != %s(sha256=%s)" % (
                first, first_sha, second, second_sha))


def sha256_checksum(filename):
    checksum = hashlib.sha256()
    with open(filename, 'rb') as f:
        for chunk in iter(lambda: f.read(8192), b''):
            checksum.update(chunk)
    return checksum.hexdigest()


def make_toy_params(num_items=6, dim=4, seed=0, scale=0.3):
    """Random parameters with every array nonzero

    Freshly initialized params have zero biases and an identity projection,
    which hides bugs in their gradients, so everything is drawn here.
    """
    params = init_params(num_items, dim, seed)
    rng = np.random.default_rng(seed + 1000)
    fields = dict(params.items())
    for name in ('b_z', 'b_r', 'b_h'):
        fields[name] = rng.uniform(-scale, scale, dim)
    fields['out_proj'] = np.eye(dim) + rng.uniform(
        -scale, scale, (dim, dim))
    fields['item_embeddings'] = rng.uniform(
        -2 * scale, 2 * scale, (num_items + 1, dim))
    return ModelParams(**fields)


def make_split_dataset(sequences, num_items, num_users=None):
    """A leave-one-out split Dataset from a list of item lists"""
    if num_users is None:
        num_users = len(sequences)
    dataset = Dataset(
        num_users, num_items,
        dict((user_id, InteractionSequence(user_id, items))
             for user_id, items in enumerate(sequences)))
    return leave_one_out_split(dataset)


def make_config(output_dir, rounds=2, num_users=20, num_items=30, dim=8,
                **sections):
    """A small, fast ExperimentConfig

    ``sections`` maps a section name to a dict of overrides, for example
    ``client={'lambda_cl': 0.0}``.
    """
    experiment = dict(rounds=rounds, client_fraction=0.5, eval_every=1,
                      k=[5, 10], base_seed=7, output_dir=output_dir,
                      max_workers=1)
    experiment.update(sections.pop('experiment', {}))
    data = dict(num_users=num_users, num_items=num_items, seq_len_min=5,
                seq_len_max=8, seed=3)
    data.update(sections.pop('data', {}))
    client = dict(local_epochs=1, neg_count=2)
    client.update(sections.pop('client', {}))
    config = ExperimentConfig(
        experiment=ExperimentSettings(**experiment),
        data=DataConfig(**data),
        model=ModelConfig(dim=dim),
        client=ClientHyper(**client),
        defense=DefenseHyper(**sections.pop('defense', {})))
    for name, overrides in sections.items():
        config = config.replace(name, **overrides)
    return config


class FileCreator(object):
    def __init__(self):
        self.rootdir = tempfile.mkdtemp()

    def remove_all(self):
        shutil.rmtree(self.rootdir)

    def create_file(self, filename, contents, mode='w'):
        """Creates a file in a tmpdir
        ``filename`` should be a relative path, e.g. "foo/bar/baz.txt"
        It will be translated into a full path in a tmp dir.
        ``mode`` is the mode the file should be opened either as ``w`` or
        `wb``.
        Returns the full path to the file.
        """
        full_path = os.path.join(self.rootdir, filename)
        if not os.path.isdir(os.path.dirname(full_path)):
            os.makedirs(os.path.dirname(full_path))
        with open(full_path, mode) as f:
            f.write(contents)
        return full_path

    def full_path(self, filename):
        """Translate relative path to full path in temp dir.
        f.full_path('foo/bar.txt') -> /tmp/asdfasd/foo/bar.txt
        """
        return os.path.join(self.rootdir, filename)


class RecordingSubscriber(BaseSubscriber):
    def __init__(self):
        self.on_round_start_calls = []
        self.on_client_done_calls = []
        self.on_round_done_calls = []

    def on_round_start(self, **kwargs):
        self.on_round_start_calls.append(kwargs)

    def on_client_done(self, **kwargs):
        self.on_client_done_calls.append(kwargs)

    def on_round_done(self, **kwargs):
        self.on_round_done_calls.append(kwargs)

    @property
    def reports(self):
        return [call['report'] for call in self.on_round_done_calls]


class BaseTaskTest(unittest.TestCase):
    def setUp(self):
        self.round_coordinator = RoundCoordinator(round_num=1)

    def get_task(self, task_cls, **kwargs):
        if 'round_coordinator' not in kwargs:
            kwargs['round_coordinator'] = self.round_coordinator
        return task_cls(**kwargs)
