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
import io
import json
import logging

from fortress.exceptions import InvalidSubscriberMethodError
from fortress.utils import accepts_kwargs


logger = logging.getLogger(__name__)


class BaseSubscriber(object):
    """The base subscriber class

    It is recommended that all subscriber implementations subclass and then
    override the subscription methods (i.e. on_{subscribe_type}() methods).
    """
    VALID_SUBSCRIBER_TYPES = [
        'round_start',
        'client_done',
        'round_done',
    ]

    def __new__(cls, *args, **kwargs):
        cls._validate_subscriber_methods()
        return super(BaseSubscriber, cls).__new__(cls)

    @classmethod
    def _validate_subscriber_methods(cls):
        for subscriber_type in cls.VALID_SUBSCRIBER_TYPES:
            subscriber_method = getattr(cls, 'on_' + subscriber_type)
            if not callable(subscriber_method):
                raise InvalidSubscriberMethodError(
                    'Subscriber method %s must be callable.' %
                    subscriber_method)

            if not accepts_kwargs(subscriber_method):
                raise InvalidSubscriberMethodError(
                    'Subscriber method %s must accept keyword '
                    'arguments (**kwargs)' % subscriber_method)

    def on_round_start(self, round_num, clients, **kwargs):
        """Callback to be invoked once the round's clients are sampled

        :type round_num: int
        :param round_num: The round about to run.

        :type clients: list
        :param clients: The sampled client ids, malicious ones included.
        """
        pass

    def on_client_done(self, round_num, update, **kwargs):
        """Callback to be invoked for each update after the round barrier

        Updates are delivered in client id order.

        :type update: fortress.client.ClientUpdate
        :param update: The update returned by the client.
        """
        pass

    def on_round_done(self, report, **kwargs):
        """Callback to be invoked once a round's report is complete

        :type report: fortress.runner.RoundReport
        :param report: The report of the finished round.
        """
        pass


class MetricsFileSubscriber(BaseSubscriber):
    """Appends each RoundReport to a JSON-lines file

    Keys are sorted so equal reports serialize to identical bytes.
    """
    def __init__(self, path, record_timing=False):
        self._path = path
        self._record_timing = record_timing

    def on_round_done(self, report, **kwargs):
        line = json.dumps(report.to_dict(self._record_timing),
                          sort_keys=True)
        with io.open(self._path, 'a', encoding='utf-8', newline='\n') as f:
            f.write(line + '\n')


class LoggingSubscriber(BaseSubscriber):
    def on_round_start(self, round_num, clients, **kwargs):
        logger.debug('Round %s starting with clients %s', round_num, clients)

    def on_round_done(self, report, **kwargs):
        message = 'Round %s: %s updates, rec loss %.4f, |V_hot|=%s, |V_sp|=%s'
        args = [report.round_num, report.num_updates, report.rec_loss,
                report.hot_size, report.sp_size]
        if report.hr:
            message += ', HR@%s=%.4f'
            k = max(report.hr)
            args.extend([k, report.hr[k]])
        logger.info(message, *args)
