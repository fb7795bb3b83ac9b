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
import zlib

import numpy as np

from tests import RecordingSubscriber
from tests import unittest
from fortress.exceptions import InvalidConfigValueError
from fortress.exceptions import UnknownConfigKeyError
from fortress.utils import BaseConfig
from fortress.utils import derive_rng
from fortress.utils import format_value
from fortress.utils import get_callbacks
from fortress.utils import parse_bool
from fortress.utils import parse_int_list
from fortress.utils import parse_optional_str
from fortress.utils import parse_str_list
from fortress.utils import seed_fingerprint
from fortress.utils import stream_key


class ExampleConfig(BaseConfig):
    SECTION = 'example'
    FIELD_TYPES = {
        'size': int,
        'enabled': parse_bool,
        'ids': parse_int_list,
    }

    def __init__(self, size=3, enabled=False, ids=None):
        self.size = size
        self.enabled = enabled
        self.ids = list(ids or [])
        self._validate()

    def _validate(self):
        self._require(self.size >= 1, 'size', 'must be >= 1')


class TestDeriveRng(unittest.TestCase):
    def test_same_keys_same_stream(self):
        first = derive_rng(7, 'client', 3, 12).random(5)
        second = derive_rng(7, 'client', 3, 12).random(5)
        np.testing.assert_array_equal(first, second)

    def test_different_keys_different_streams(self):
        base = derive_rng(7, 'client', 3, 12).random(5)
        for keys in [('client', 3, 13), ('client', 4, 12), ('attack', 3, 12)]:
            self.assertFalse(np.array_equal(
                derive_rng(7, *keys).random(5), base))
        self.assertFalse(np.array_equal(
            derive_rng(8, 'client', 3, 12).random(5), base))

    def test_string_keys_are_stable(self):
        self.assertEqual(stream_key('client'),
                         zlib.crc32(b'client') & 0xffffffff)
        self.assertEqual(stream_key(5), 5)

    def test_seed_fingerprint(self):
        self.assertEqual(seed_fingerprint(7, 1), seed_fingerprint(7, 1))
        self.assertNotEqual(seed_fingerprint(7, 1), seed_fingerprint(7, 2))
        self.assertEqual(len(seed_fingerprint(7, 1)), 16)


class TestGetCallbacks(unittest.TestCase):
    def setUp(self):
        self.subscriber = RecordingSubscriber()
        self.second_subscriber = RecordingSubscriber()
        self.subscribers = [self.subscriber, self.second_subscriber]

    def test_get_callbacks(self):
        callbacks = get_callbacks(self.subscribers, 'round_start')
        # Both subscribers have an on_round_start method.
        self.assertEqual(len(callbacks), 2)
        callbacks[0](round_num=1, clients=[0, 2])
        self.assertEqual(
            self.subscriber.on_round_start_calls,
            [{'round_num': 1, 'clients': [0, 2]}]
        )
        self.assertEqual(self.second_subscriber.on_round_start_calls, [])

    def test_get_callbacks_for_missing_type(self):
        callbacks = get_callbacks(self.subscribers, 'fake_state')
        self.assertEqual(len(callbacks), 0)


class TestParsers(unittest.TestCase):
    def test_parse_bool(self):
        for raw in ('true', 'Yes', '1', 'on', True):
            self.assertIs(parse_bool(raw), True)
        for raw in ('false', 'NO', '0', 'off', False):
            self.assertIs(parse_bool(raw), False)
        with self.assertRaises(ValueError):
            parse_bool('maybe')

    def test_parse_int_list(self):
        self.assertEqual(parse_int_list('5, 10,20'), [5, 10, 20])
        self.assertEqual(parse_int_list(''), [])
        self.assertEqual(parse_int_list((1, 2)), [1, 2])
        with self.assertRaises(ValueError):
            parse_int_list('5,ten')

    def test_parse_str_list(self):
        self.assertEqual(parse_str_list('sequence, user'),
                         ['sequence', 'user'])
        self.assertEqual(parse_str_list(' '), [])

    def test_parse_optional_str(self):
        self.assertIsNone(parse_optional_str('  '))
        self.assertIsNone(parse_optional_str(None))
        self.assertEqual(parse_optional_str(' a '), 'a')

    def test_format_value(self):
        self.assertEqual(format_value(True), 'true')
        self.assertEqual(format_value([5, 10]), '5,10')
        self.assertEqual(format_value(None), '')
        self.assertEqual(format_value(0.1), '0.1')
        self.assertEqual(format_value(3), '3')


class TestBaseConfig(unittest.TestCase):
    def test_from_mapping(self):
        config = ExampleConfig.from_mapping(
            {'size': '4', 'enabled': 'yes', 'ids': '1,2'})
        self.assertEqual(config, ExampleConfig(4, True, [1, 2]))

    def test_missing_keys_take_defaults(self):
        self.assertEqual(ExampleConfig.from_mapping({}), ExampleConfig())

    def test_unknown_key(self):
        with self.assertRaises(UnknownConfigKeyError):
            ExampleConfig.from_mapping({'colour': 'red'})

    def test_unconvertible_value(self):
        with self.assertRaises(InvalidConfigValueError) as context:
            ExampleConfig.from_mapping({'size': 'big'})
        self.assertEqual(context.exception.field, 'example.size')

    def test_validation(self):
        with self.assertRaises(InvalidConfigValueError) as context:
            ExampleConfig(size=0)
        self.assertEqual(context.exception.field, 'example.size')
        self.assertIn('must be >= 1', str(context.exception))

    def test_to_section(self):
        self.assertEqual(
            ExampleConfig(ids=[3]).to_section(),
            {'enabled': 'false', 'ids': '3', 'size': '3'})

    def test_equality(self):
        self.assertEqual(ExampleConfig(), ExampleConfig())
        self.assertNotEqual(ExampleConfig(size=2), ExampleConfig())
        self.assertIn('size=3', repr(ExampleConfig()))
