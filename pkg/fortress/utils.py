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
import inspect
import zlib

import numpy as np

from fortress.exceptions import InvalidConfigValueError
from fortress.exceptions import UnknownConfigKeyError


def accepts_kwargs(func):
    return inspect.getfullargspec(func)[2]


def stream_key(name):
    """Map a stream name onto a stable 32-bit integer

    ``hash()`` is salted per process, so string keys are reduced with crc32
    to keep seeds identical across runs and platforms.
    """
    if isinstance(name, str):
        return zlib.crc32(name.encode('utf-8')) & 0xffffffff
    return int(name)


def derive_rng(base_seed, *keys):
    """Create an independent generator for a (base_seed, keys...) stream

    :type base_seed: int
    :param base_seed: The experiment-wide seed.

    :param keys: Integers or strings identifying the stream, for example
        ``derive_rng(seed, 'client', round_num, client_id)``.

    :rtype: numpy.random.Generator
    """
    entropy = [stream_key(base_seed)] + [stream_key(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def seed_fingerprint(base_seed, round_num):
    digest = hashlib.sha256(
        ('%s:%s' % (base_seed, round_num)).encode('utf-8'))
    return digest.hexdigest()[:16]


def get_callbacks(subscribers, callback_type):
    """Retrieves callbacks from a list of subscribers

    :param subscribers: The subscribers to pull callbacks from.

    :type callback_type: str
    :param callback_type: The type of callback to retrieve. Valid types
        include:
            * 'round_start'
            * 'client_done'
            * 'round_done'

    :returns: A list of bound callbacks for the type specified.
    """
    callbacks = []
    for subscriber in subscribers:
        callback_name = 'on_' + callback_type
        if hasattr(subscriber, callback_name):
            callbacks.append(getattr(subscriber, callback_name))
    return callbacks


def parse_bool(value):
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('expected a boolean, got %r' % value)


def parse_int_list(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    value = str(value).strip()
    if not value:
        return []
    return [int(v) for v in value.split(',')]


def parse_str_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    value = str(value).strip()
    if not value:
        return []
    return [v.strip() for v in value.split(',')]


def parse_optional_str(value):
    if value is None:
        return None
    value = str(value).strip()
    return value or None


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


class BaseConfig(object):
    """Base class for validated hyperparameter bundles

    Subclasses set ``SECTION`` and ``FIELD_TYPES`` (field name to a
    converter accepting strings) and assign every field in ``__init__``
    before calling ``self._validate()``.
    """
    SECTION = None
    FIELD_TYPES = {}

    @classmethod
    def from_mapping(cls, mapping):
        """Build a config from a section of string values

        :param mapping: A dict-like of key to raw value. Missing keys take
            the constructor default.

        :raises UnknownConfigKeyError: If a key is not a known field.
        :raises InvalidConfigValueError: If a value cannot be converted or
            violates the config's invariants.
        """
        kwargs = {}
        for key, raw_value in mapping.items():
            if key not in cls.FIELD_TYPES:
                raise UnknownConfigKeyError(cls.SECTION, key)
            try:
                kwargs[key] = cls.FIELD_TYPES[key](raw_value)
            except (TypeError, ValueError) as e:
                raise InvalidConfigValueError(cls._field_name(key), str(e))
        return cls(**kwargs)

    @classmethod
    def _field_name(cls, name):
        return '%s.%s' % (cls.SECTION, name)

    def _require(self, condition, name, msg):
        if not condition:
            raise InvalidConfigValueError(
                self._field_name(name),
                '%s (got %r)' % (msg, getattr(self, name, None)))

    def _validate(self):
        pass

    def as_dict(self):
        return dict(
            (name, getattr(self, name)) for name in sorted(self.FIELD_TYPES))

    def to_section(self):
        return dict(
            (name, format_value(value))
            for name, value in self.as_dict().items())

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    def __repr__(self):
        return '%s(%s)' % (
            self.__class__.__name__,
            ', '.join('%s=%r' % item for item in self.as_dict().items()))
