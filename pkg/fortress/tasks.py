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
import logging

from fortress.attacks import attack_update
from fortress.client import local_train
from fortress.utils import derive_rng


logger = logging.getLogger(__name__)


class Task(object):
    """A unit of client work within a round

    This is a base class for other classes to subclass from. All subclassed
    classes must implement the _main() method.
    """
    def __init__(self, round_coordinator, client_id, main_kwargs=None):
        """
        :type round_coordinator: fortress.futures.RoundCoordinator
        :param round_coordinator: The coordinator of the round this task
            belongs to. The task records its result or failure there.

        :param client_id: The client this task runs for.

        :type main_kwargs: dict
        :param main_kwargs: The keyword args supplied to the _main() method
            of the task.
        """
        self._round_coordinator = round_coordinator
        self._client_id = client_id
        self._main_kwargs = main_kwargs
        if self._main_kwargs is None:
            self._main_kwargs = {}

    def __repr__(self):
        return '%s(round_num=%s, client_id=%s)' % (
            self.__class__.__name__, self._round_coordinator.round_num,
            self._client_id)

    @property
    def client_id(self):
        return self._client_id

    def __call__(self):
        """The callable to use when submitting a Task to an executor"""
        try:
            logger.debug('Executing task %s', self)
            result = self._main(**self._main_kwargs)
            self._round_coordinator.record_result(self._client_id, result)
            return result
        except Exception as e:
            self._log_and_record_failure(e)

    def _log_and_record_failure(self, exception):
        logger.warning('Task %s failed: %s', self, exception)
        logger.debug('Exception raised.', exc_info=True)
        self._round_coordinator.record_failure(self._client_id, exception)

    def _main(self, **kwargs):
        """The method that will be ran in the executor

        This method must be implemented by subclasses from Task. _main() can
        be implemented with any arguments decided upon by the subclass.
        """
        raise NotImplementedError('_main() must be implemented')


class LocalTrainingTask(Task):
    """Benign local training of one sampled client"""
    def _main(self, global_params, client_data, hyper, policy, base_seed,
              round_num):
        """
        :param global_params: The global model sent this round.
        :param client_data: The client's InteractionSequence.
        :param hyper: The ClientHyper.
        :param policy: The AugmentationPolicy.
        :param base_seed: The experiment seed; with the round and client id
            it determines the client's private generator.
        :param round_num: The current round.

        :returns: A ClientUpdate, or None if the client was skipped.
        """
        rng = derive_rng(base_seed, 'client', round_num, self._client_id)
        return local_train(
            global_params, client_data, hyper, rng, policy=policy,
            client_id=self._client_id, round_num=round_num)


class AttackTask(Task):
    """A malicious client crafting a poisoned update"""
    def _main(self, global_params, spec, popular_items, hyper,
              norm_reference, base_seed, round_num):
        rng = derive_rng(base_seed, 'attack', round_num, self._client_id)
        return attack_update(
            global_params, spec, popular_items, rng, hyper=hyper,
            norm_reference=norm_reference, client_id=self._client_id,
            round_num=round_num)
