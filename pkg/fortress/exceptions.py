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


class FortressError(Exception):
    pass


class InvalidHyperparameterError(FortressError, ValueError):
    pass


class ConfigError(FortressError, ValueError):
    pass


class UnknownConfigKeyError(ConfigError):
    def __init__(self, section, key):
        super(UnknownConfigKeyError, self).__init__(
            'Unknown config key %s.%s' % (section, key))
        self.section = section
        self.key = key


class InvalidConfigValueError(ConfigError):
    def __init__(self, field, msg):
        super(InvalidConfigValueError, self).__init__(
            'Invalid value for %s: %s' % (field, msg))
        self.field = field


class DataError(FortressError):
    pass


class ParseError(DataError):
    def __init__(self, line_number, msg):
        super(ParseError, self).__init__(
            'Line %s: %s' % (line_number, msg))
        self.line_number = line_number


class EmptyDatasetError(DataError):
    pass


class ShapeMismatchError(FortressError, ValueError):
    pass


class NonFiniteLossError(FortressError):
    pass


class AttackError(FortressError):
    pass


class AggregationError(FortressError):
    pass


class CheckpointError(FortressError):
    pass


class ChecksumError(CheckpointError):
    pass


class ConfigHashMismatchError(CheckpointError):
    pass


class HaltError(FortressError):
    """Raised when the global model stops being finite"""
    def __init__(self, round_num, dump_path=None, msg=None):
        if msg is None:
            msg = 'Non-finite aggregate parameters in round %s' % round_num
        if dump_path is not None:
            msg = '%s (diagnostics written to %s)' % (msg, dump_path)
        super(HaltError, self).__init__(msg)
        self.round_num = round_num
        self.dump_path = dump_path


class ClientFailedError(FortressError):
    def __init__(self, client_id, last_exception):
        super(ClientFailedError, self).__init__(
            'Client %s failed: %r' % (client_id, last_exception))
        self.client_id = client_id
        self.last_exception = last_exception


class InvalidSubscriberMethodError(FortressError):
    pass
