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
"""Experiment configuration files

An experiment is described by an INI file with one section per component::

    [experiment]
    rounds = 30
    base_seed = 7

    [data]
    source = synthetic
    num_users = 200

Every key is optional; missing keys take their documented defaults and an
unknown section or key is an error. :func:`format_config` writes the fully
defaulted configuration back out in the same format, and parsing that echo
yields an equal config.
"""
import collections
import configparser
import hashlib
import io
import logging

from fortress.attacks import AttackSpec
from fortress.client import ClientHyper
from fortress.constants import DEFAULT_DIM
from fortress.data import AugmentationPolicy
from fortress.data import DataConfig
from fortress.exceptions import ConfigError
from fortress.server import DefenseHyper
from fortress.server import ServerConfig
from fortress.utils import BaseConfig
from fortress.utils import parse_bool
from fortress.utils import parse_int_list


logger = logging.getLogger(__name__)


# Keys that do not change a run's trajectory, so checkpoints stay
# resumable when only these differ.
HASH_EXCLUDED_KEYS = [
    ('experiment', 'rounds'),
    ('experiment', 'output_dir'),
    ('experiment', 'max_workers'),
]


class ExperimentSettings(BaseConfig):
    SECTION = 'experiment'
    FIELD_TYPES = {
        'rounds': int,
        'client_fraction': float,
        'eval_every': int,
        'k': parse_int_list,
        'base_seed': int,
        'output_dir': str,
        'record_timing': parse_bool,
        'max_workers': int,
    }

    def __init__(self, rounds=100, client_fraction=0.1, eval_every=5,
                 k=None, base_seed=0, output_dir='fortress-output',
                 record_timing=False, max_workers=4):
        """Round-loop settings

        :param rounds: Total communication rounds (T).
        :param client_fraction: Fraction of benign clients sampled per
            round.
        :param eval_every: Evaluate and checkpoint every this many rounds.
        :param k: Cut-offs for HR, NDCG and ER.
        :param base_seed: Seed every random stream is derived from.
        :param output_dir: Where metrics, the config echo and checkpoints
            are written.
        :param record_timing: Add wall-clock time to each report. Off by
            default so metrics files are reproducible byte for byte.
        :param max_workers: Threads training clients in parallel; 1 trains
            them serially in the calling thread.
        """
        self.rounds = rounds
        self.client_fraction = client_fraction
        self.eval_every = eval_every
        self.k = list(k) if k is not None else [5, 10, 20]
        self.base_seed = base_seed
        self.output_dir = output_dir
        self.record_timing = record_timing
        self.max_workers = max_workers
        self._validate()

    def _validate(self):
        self._require(self.rounds >= 1, 'rounds', 'must be >= 1')
        self._require(0 < self.client_fraction <= 1, 'client_fraction',
                      'must be in (0, 1]')
        self._require(self.eval_every >= 1, 'eval_every', 'must be >= 1')
        self._require(bool(self.k) and all(k >= 1 for k in self.k), 'k',
                      'must be a non-empty list of positive integers')
        self._require(self.base_seed >= 0, 'base_seed', 'must be >= 0')
        self._require(bool(self.output_dir), 'output_dir',
                      'must not be empty')
        self._require(self.max_workers >= 1, 'max_workers', 'must be >= 1')


class ModelConfig(BaseConfig):
    SECTION = 'model'
    FIELD_TYPES = {
        'dim': int,
    }

    def __init__(self, dim=DEFAULT_DIM):
        self.dim = dim
        self._validate()

    def _validate(self):
        self._require(self.dim >= 2, 'dim', 'must be >= 2')


class ExperimentConfig(object):
    """Every section of an experiment, each validated on its own"""
    SECTION_CLASSES = collections.OrderedDict([
        ('experiment', ExperimentSettings),
        ('data', DataConfig),
        ('model', ModelConfig),
        ('client', ClientHyper),
        ('augmentation', AugmentationPolicy),
        ('server', ServerConfig),
        ('defense', DefenseHyper),
        ('attack', AttackSpec),
    ])

    def __init__(self, experiment=None, data=None, model=None, client=None,
                 augmentation=None, server=None, defense=None, attack=None):
        self.experiment = experiment or ExperimentSettings()
        self.data = data or DataConfig()
        self.model = model or ModelConfig()
        self.client = client or ClientHyper()
        self.augmentation = augmentation or AugmentationPolicy()
        self.server = server or ServerConfig()
        self.defense = defense or DefenseHyper()
        self.attack = attack or AttackSpec()

    def __repr__(self):
        return 'ExperimentConfig(%s)' % ', '.join(
            '%s=%r' % (name, getattr(self, name))
            for name in self.SECTION_CLASSES)

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return all(getattr(self, name) == getattr(other, name)
                   for name in self.SECTION_CLASSES)

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    def sections(self):
        return [(name, getattr(self, name)) for name in self.SECTION_CLASSES]

    def replace(self, section, **fields):
        """A copy with some fields of one section changed

        The changed section is re-validated.
        """
        if section not in self.SECTION_CLASSES:
            raise ConfigError('Unknown config section [%s]' % section)
        values = getattr(self, section).as_dict()
        values.update(fields)
        kwargs = dict(self.sections())
        kwargs[section] = self.SECTION_CLASSES[section](**values)
        return ExperimentConfig(**kwargs)


def _new_parser():
    parser = configparser.ConfigParser(
        interpolation=None, default_section='__defaults__')
    # Keys are case sensitive.
    parser.optionxform = str
    return parser


def parse_config_string(text, source='<string>'):
    parser = _new_parser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError('Cannot parse %s: %s' % (source, e))
    sections = {}
    for section in parser.sections():
        if section not in ExperimentConfig.SECTION_CLASSES:
            raise ConfigError('Unknown config section [%s] in %s' % (
                section, source))
        config_cls = ExperimentConfig.SECTION_CLASSES[section]
        sections[section] = config_cls.from_mapping(dict(parser[section]))
    return ExperimentConfig(**sections)


def parse_config(path):
    """Read and validate an experiment config file

    :raises ConfigError: On unreadable syntax or an unknown section.
    :raises UnknownConfigKeyError: On an unknown key.
    :raises InvalidConfigValueError: On a value that violates a section's
        invariants; the error names the ``section.key``.
    """
    with io.open(path, 'r', encoding='utf-8') as f:
        return parse_config_string(f.read(), source=path)


def format_config(config, exclude=()):
    """Echo ``config`` as INI text with every default filled in

    Sections keep a fixed order and keys are sorted, so equal configs
    produce identical text.
    """
    lines = []
    for name, section in config.sections():
        lines.append('[%s]' % name)
        for key, value in sorted(section.to_section().items()):
            if (name, key) in exclude:
                continue
            lines.append(('%s = %s' % (key, value)).rstrip())
        lines.append('')
    return '\n'.join(lines)


def config_hash(config):
    """sha256 of the canonical echo, ignoring keys that do not affect the
    trajectory of a run
    """
    text = format_config(config, exclude=HASH_EXCLUDED_KEYS)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()
