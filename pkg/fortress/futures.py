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
from concurrent import futures
import logging
import threading

from fortress.exceptions import ClientFailedError


logger = logging.getLogger(__name__)


class RoundCoordinator(object):
    """Collects the client tasks of one round and acts as its barrier

    Each task records either a result or a failure for its client. A
    failure is logged and kept; it never stops the other clients.
    """
    def __init__(self, round_num=None):
        self.round_num = round_num
        self._results = {}
        self._failures = {}
        self._in_flight = set()
        self._lock = threading.Lock()

    def __repr__(self):
        return '%s(round_num=%s)' % (
            self.__class__.__name__, self.round_num)

    def record_result(self, client_id, result):
        with self._lock:
            self._results[client_id] = result

    def record_failure(self, client_id, exception):
        with self._lock:
            self._failures[client_id] = ClientFailedError(
                client_id, exception)

    @property
    def failures(self):
        """ClientFailedError per failed client id"""
        with self._lock:
            return dict(self._failures)

    @property
    def in_flight(self):
        """Futures of submitted tasks that have not finished yet"""
        with self._lock:
            return set(self._in_flight)

    def results(self):
        """Recorded results sorted by client id, skipping None results"""
        with self._lock:
            return [self._results[client_id]
                    for client_id in sorted(self._results)
                    if self._results[client_id] is not None]

    def submit(self, executor, task):
        """Run ``task`` on ``executor`` as part of this round

        :type executor: fortress.futures.BoundedExecutor
        :type task: fortress.tasks.Task

        :returns: The future of the submitted task.
        """
        logger.debug('Round %s: submitting %s', self.round_num, task)
        future = executor.submit(task)
        with self._lock:
            self._in_flight.add(future)
        future.add_done_callback(self._task_finished)
        return future

    def _task_finished(self, future):
        with self._lock:
            self._in_flight.discard(future)

    def wait(self):
        """Block until every submitted task has finished

        :returns: The sorted results, as :meth:`results`.
        """
        for future in self.in_flight:
            # Tasks record their own failures.
            future.result()
        return self.results()


class BoundedExecutor(object):
    EXECUTOR_CLS = futures.ThreadPoolExecutor

    def __init__(self, max_size, max_num_threads, executor_cls=None):
        """Thread pool whose submit blocks once ``max_size`` tasks are queued

        Client tasks hold a full model copy each, so the bound caps memory
        as well as queue length.

        :param max_size: The most tasks submitted and not yet finished.
        :param max_num_threads: Worker threads of the wrapped executor.
        :param executor_cls: The executor class to wrap. Defaults to
            ``EXECUTOR_CLS``.
        """
        if executor_cls is None:
            executor_cls = self.EXECUTOR_CLS
        self._executor = executor_cls(max_workers=max_num_threads)
        self._slots = threading.BoundedSemaphore(max_size)

    def submit(self, task):
        self._slots.acquire()
        try:
            future = self._executor.submit(task)
        except Exception:
            self._slots.release()
            raise
        future.add_done_callback(self._release_slot)
        return future

    def _release_slot(self, future):
        self._slots.release()

    def shutdown(self, wait=True):
        self._executor.shutdown(wait)


class NonThreadedExecutor(object):
    """Runs each submitted callable at once in the calling thread"""
    def __init__(self, max_workers=None):
        pass

    def submit(self, fn, *args, **kwargs):
        future = NonThreadedExecutorFuture()
        try:
            future.set_result(fn(*args, **kwargs))
        except Exception as e:
            logger.debug('Serial call %s raised %r', fn, e)
            future.set_exception(e)
        return future

    def shutdown(self, wait=True):
        pass


class NonThreadedExecutorFuture(object):
    """The already settled future returned by NonThreadedExecutor

    Not thread-safe; it only ever lives in the thread that created it.
    """
    def __init__(self):
        self._result = None
        self._exception = None
        self._done = False
        self._callbacks = []

    def set_result(self, result):
        self._result = result
        self._settle()

    def set_exception(self, exception):
        self._exception = exception
        self._settle()

    def result(self, timeout=None):
        if self._exception is not None:
            raise self._exception
        return self._result

    def done(self):
        return self._done

    def add_done_callback(self, fn):
        """Call ``fn(future)`` once settled, right away if already settled"""
        if self._done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def _settle(self):
        self._done = True
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)


def create_executor(max_workers):
    """A serial executor for one worker, a bounded thread pool otherwise"""
    if max_workers <= 1:
        return BoundedExecutor(
            max_size=1, max_num_threads=1, executor_cls=NonThreadedExecutor)
    return BoundedExecutor(max_size=max_workers * 2,
                           max_num_threads=max_workers)
