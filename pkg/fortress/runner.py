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
"""The federated round loop

Each round samples clients, trains them in parallel up to a barrier,
aggregates, updates the server's popularity statistics, applies the
embedding defense and, every ``eval_every`` rounds, evaluates and
checkpoints. Every random stream is derived from ``base_seed`` plus the
round and client id, so a run is fully determined by its config and can
be resumed from any checkpoint.
"""
import io
import json
import logging
import math
import os
import time

import numpy as np

from fortress.attacks import malicious_client_ids
from fortress.attacks import resolve_targets
from fortress.checkpoint import checkpoint_filename
from fortress.checkpoint import load_checkpoint
from fortress.checkpoint import save_checkpoint
from fortress.config import config_hash
from fortress.config import format_config
from fortress.constants import CHECKPOINT_DIRNAME
from fortress.constants import CONFIG_ECHO_FILENAME
from fortress.constants import METRICS_FILENAME
from fortress.constants import PROVENANCE_BENIGN
from fortress.data import leave_one_out_split
from fortress.data import load_interactions
from fortress.data import most_popular
from fortress.data import synth_generate
from fortress.encoder import init_params
from fortress.evaluation import evaluate
from fortress.exceptions import HaltError
from fortress.futures import RoundCoordinator
from fortress.futures import create_executor
from fortress.server import PopularityState
from fortress.server import aggregate_updates
from fortress.server import hot_centroid
from fortress.server import identify_sets
from fortress.server import run_defense
from fortress.server import sample_clients
from fortress.server import strip_provenance
from fortress.server import update_popularity
from fortress.subscribers import LoggingSubscriber
from fortress.subscribers import MetricsFileSubscriber
from fortress.tasks import AttackTask
from fortress.tasks import LocalTrainingTask
from fortress.utils import derive_rng
from fortress.utils import get_callbacks
from fortress.utils import seed_fingerprint


logger = logging.getLogger(__name__)


class RoundReport(object):
    """Metrics of one round; evaluation fields are empty between evals"""
    def __init__(self, round_num, seed_fingerprint, num_updates=0,
                 num_malicious=0, skipped_clients=None, rec_loss=0.0,
                 cl_loss=0.0, tcr_loss=0.0, sep_loss=0.0, var_loss=0.0,
                 hot_size=0, sp_size=0, hot_centroid_shift=None,
                 defense_backtracks=0, hr=None, ndcg=None, er=None,
                 er_mean=None, wall_time=None):
        self.round_num = round_num
        self.seed_fingerprint = seed_fingerprint
        self.num_updates = num_updates
        self.num_malicious = num_malicious
        self.skipped_clients = list(skipped_clients or [])
        self.rec_loss = rec_loss
        self.cl_loss = cl_loss
        self.tcr_loss = tcr_loss
        self.sep_loss = sep_loss
        self.var_loss = var_loss
        self.hot_size = hot_size
        self.sp_size = sp_size
        self.hot_centroid_shift = hot_centroid_shift
        self.defense_backtracks = defense_backtracks
        self.hr = dict(hr or {})
        self.ndcg = dict(ndcg or {})
        self.er = dict(er or {})
        self.er_mean = dict(er_mean or {})
        self.wall_time = wall_time

    def __repr__(self):
        return 'RoundReport(round_num=%s)' % self.round_num

    @property
    def evaluated(self):
        return bool(self.hr)

    def to_dict(self, record_timing=False):
        report = {
            'round': self.round_num,
            'seed_fingerprint': self.seed_fingerprint,
            'num_updates': self.num_updates,
            'num_malicious': self.num_malicious,
            'skipped_clients': self.skipped_clients,
            'losses': {
                'rec': self.rec_loss,
                'cl': self.cl_loss,
                'tcr': self.tcr_loss,
                'sep': self.sep_loss,
                'var': self.var_loss,
            },
            'defense': {
                'hot_size': self.hot_size,
                'sp_size': self.sp_size,
                'hot_centroid_shift': self.hot_centroid_shift,
                'backtracks': self.defense_backtracks,
            },
        }
        if self.evaluated:
            report['hr'] = _str_keys(self.hr)
            report['ndcg'] = _str_keys(self.ndcg)
            if self.er:
                report['er'] = dict(
                    (str(k), _str_keys(per_target))
                    for k, per_target in self.er.items())
                report['er_mean'] = _str_keys(self.er_mean)
        if record_timing:
            report['wall_time'] = self.wall_time
        return report


def _str_keys(mapping):
    return dict((str(k), v) for k, v in mapping.items())


def _mean(values):
    values = list(values)
    if not values:
        return 0.0
    return sum(values) / len(values)


def load_dataset(data_config):
    """Build and split the dataset described by a DataConfig"""
    if data_config.source == 'csv':
        dataset = load_interactions(
            data_config.path, max_seq_len=data_config.max_seq_len)
    else:
        dataset = synth_generate(
            data_config.num_users, data_config.num_items,
            (data_config.seq_len_min, data_config.seq_len_max),
            transition_skew=data_config.transition_skew,
            seed=data_config.seed,
            popularity_exponent=data_config.popularity_exponent,
            repeat_free=data_config.repeat_free)
    return leave_one_out_split(dataset)


class FederatedRunner(object):
    def __init__(self, config, dataset=None, subscribers=None,
                 executor=None):
        """Drives the rounds of one experiment

        :type config: fortress.config.ExperimentConfig
        :param config: The experiment to run.

        :param dataset: A split Dataset. Built from ``config.data`` when
            omitted.

        :param subscribers: BaseSubscriber instances notified of round
            events.

        :param executor: The executor client tasks run on. Built from
            ``config.experiment.max_workers`` when omitted.
        """
        self._config = config
        self._settings = config.experiment
        if dataset is None:
            dataset = load_dataset(config.data)
        self._dataset = dataset
        self._subscribers = list(subscribers or [])
        self._executor = executor
        self._config_hash = config_hash(config)

        attack = config.attack
        if attack.enabled or attack.target_items:
            attack = resolve_targets(attack, dataset)
        self._attack = attack
        self._targets = list(attack.target_items)
        self._popular_items = most_popular(dataset, attack.popular_fraction)
        self._benign_ids = dataset.user_ids
        self._malicious_ids = []
        if attack.enabled:
            self._malicious_ids = malicious_client_ids(
                len(self._benign_ids), attack.malicious_fraction)

        self.params = init_params(
            dataset.num_items, config.model.dim, self._settings.base_seed)
        self.popularity = PopularityState(dataset.num_items)
        self.norm_reference = None
        self.previous_centroid = None
        self.round_num = 0

    @property
    def dataset(self):
        return self._dataset

    @property
    def targets(self):
        return list(self._targets)

    @property
    def malicious_ids(self):
        return list(self._malicious_ids)

    @property
    def config_hash(self):
        return self._config_hash

    def run(self):
        """Run the remaining rounds up to ``rounds``

        :returns: The RoundReports of the rounds run by this call.
        :raises HaltError: If the global model stops being finite.
        """
        executor = self._executor
        owns_executor = executor is None
        if owns_executor:
            executor = create_executor(self._settings.max_workers)
        reports = []
        try:
            while self.round_num < self._settings.rounds:
                reports.append(self.run_round(self.round_num + 1, executor))
        finally:
            if owns_executor:
                executor.shutdown()
        return reports

    def _round_clients(self, round_num):
        pool = list(self._benign_ids)
        if self._malicious_ids and round_num >= self._attack.start_round:
            pool.extend(self._malicious_ids)
        rng = derive_rng(self._settings.base_seed, 'sample', round_num)
        return sample_clients(
            pool, self._settings.client_fraction, round_num, rng)

    def _submit_clients(self, coordinator, executor, clients, round_num):
        malicious = set(self._malicious_ids)
        for client_id in clients:
            if client_id in malicious:
                task = AttackTask(
                    coordinator, client_id, main_kwargs={
                        'global_params': self.params,
                        'spec': self._attack,
                        'popular_items': self._popular_items,
                        'hyper': self._config.client,
                        'norm_reference': self.norm_reference,
                        'base_seed': self._settings.base_seed,
                        'round_num': round_num,
                    })
            else:
                task = LocalTrainingTask(
                    coordinator, client_id, main_kwargs={
                        'global_params': self.params,
                        'client_data': self._dataset.sequence(client_id),
                        'hyper': self._config.client,
                        'policy': self._config.augmentation,
                        'base_seed': self._settings.base_seed,
                        'round_num': round_num,
                    })
            coordinator.submit(executor, task)

    def run_round(self, round_num, executor):
        started = time.time()
        clients = self._round_clients(round_num)
        for callback in get_callbacks(self._subscribers, 'round_start'):
            callback(round_num=round_num, clients=clients)

        coordinator = RoundCoordinator(round_num)
        self._submit_clients(coordinator, executor, clients, round_num)
        updates = coordinator.wait()
        for client_id, failure in sorted(coordinator.failures.items()):
            logger.warning('Round %s: %s', round_num, failure)
        for update in updates:
            for callback in get_callbacks(self._subscribers, 'client_done'):
                callback(round_num=round_num, update=update)

        returned = set(u.client_id for u in updates)
        report = RoundReport(
            round_num, seed_fingerprint(self._settings.base_seed, round_num),
            num_updates=len(updates),
            num_malicious=sum(
                1 for u in updates if u.provenance != PROVENANCE_BENIGN),
            skipped_clients=[c for c in clients if c not in returned])
        benign = [u for u in updates
                  if u.provenance == PROVENANCE_BENIGN and u.losses]
        report.rec_loss = _mean(u.losses.rec for u in benign)
        report.cl_loss = _mean(u.losses.cl for u in benign)
        report.tcr_loss = _mean(u.losses.tcr for u in benign)

        if updates:
            self._server_round(round_num, updates, report)
        else:
            logger.warning('Round %s produced no updates; global model '
                           'unchanged', round_num)

        if round_num % self._settings.eval_every == 0:
            self._evaluate(report)
            self.save(os.path.join(
                self._settings.output_dir, CHECKPOINT_DIRNAME,
                checkpoint_filename(round_num)), round_num)
        self.round_num = round_num
        report.wall_time = time.time() - started
        for callback in get_callbacks(self._subscribers, 'round_done'):
            callback(report=report)
        return report

    def _server_round(self, round_num, updates, report):
        # The harness, not the server, tracks the benign norm statistic
        # attackers match next round.
        benign_norms = [u.params.sub(self.params).norm() for u in updates
                        if u.provenance == PROVENANCE_BENIGN]
        server_updates = [strip_provenance(u) for u in updates]
        aggregated = aggregate_updates(
            server_updates, self._config.server, self.params)
        self._check_finite(round_num, aggregated, server_updates)

        defense = self._config.defense
        self.popularity = update_popularity(
            self.popularity, server_updates, aggregated, self.params,
            defense)
        if round_num % defense.defense_every == 0:
            result = run_defense(aggregated, self.popularity, defense)
            aggregated = result.params
            hot, suspicious = result.hot, result.suspicious
            report.sep_loss = result.sep_loss
            report.var_loss = result.var_loss
            report.defense_backtracks = result.backtracks
            self._check_finite(round_num, aggregated, server_updates)
        else:
            hot, suspicious = identify_sets(self.popularity, defense)
        report.hot_size = len(hot)
        report.sp_size = len(suspicious)

        centroid = hot_centroid(
            aggregated.item_embeddings[:aggregated.num_items], hot)
        if centroid is not None and self.previous_centroid is not None:
            report.hot_centroid_shift = float(
                np.linalg.norm(centroid - self.previous_centroid))
        self.previous_centroid = centroid
        if benign_norms:
            self.norm_reference = float(np.median(benign_norms))
        self.params = aggregated

    def _check_finite(self, round_num, params, server_updates):
        if params.is_finite():
            return
        path = os.path.join(
            self._settings.output_dir, 'halt_round_%s.json' % round_num)
        dump = {
            'round': round_num,
            'config_hash': self._config_hash,
            'non_finite_fields': [
                name for name, array in params.items()
                if not np.all(np.isfinite(array))],
            'updates': [
                {'client_id': u.client_id, 'n_u': u.n_u,
                 'finite': u.params.is_finite(),
                 'delta_norm': _json_float(u.params.sub(self.params).norm())}
                for u in server_updates],
        }
        if not os.path.isdir(self._settings.output_dir):
            os.makedirs(self._settings.output_dir)
        with io.open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps(dump, sort_keys=True, indent=2))
        logger.error('Halting in round %s; diagnostics in %s',
                     round_num, path)
        raise HaltError(round_num, dump_path=path)

    def _evaluate(self, report):
        result = evaluate(self.params, self._dataset, self._settings.k,
                          targets=self._targets or None)
        report.hr = result.hr
        report.ndcg = result.ndcg
        report.er = result.er
        report.er_mean = result.er_mean

    def save(self, path, round_num=None):
        state = dict(
            ('popularity_' + name, array)
            for name, array in self.popularity.as_arrays().items())
        state['norm_reference'] = np.array(
            np.nan if self.norm_reference is None else self.norm_reference)
        state['previous_centroid'] = (
            np.zeros(0) if self.previous_centroid is None
            else self.previous_centroid)
        save_checkpoint(self.params, path, config_hash=self._config_hash,
                        round_num=round_num, state=state)

    def restore(self, path):
        """Continue from a checkpoint written by a run of the same config

        :raises ConfigHashMismatchError: If the checkpoint belongs to a
            different config.
        """
        checkpoint = load_checkpoint(
            path, expected_hash=self._config_hash, like=self.params)
        state = checkpoint.state
        self.params = checkpoint.params
        self.popularity = PopularityState.from_arrays(dict(
            (name[len('popularity_'):], array)
            for name, array in state.items()
            if name.startswith('popularity_')))
        norm_reference = float(state['norm_reference'])
        self.norm_reference = (
            None if math.isnan(norm_reference) else norm_reference)
        centroid = state['previous_centroid']
        self.previous_centroid = centroid if centroid.size else None
        self.round_num = checkpoint.round_num
        logger.info('Resuming from round %s of %s', self.round_num, path)


def _json_float(value):
    return value if math.isfinite(value) else repr(value)


def _truncate_metrics(path, last_round):
    if not os.path.exists(path):
        return
    with io.open(path, 'r', encoding='utf-8') as f:
        kept = [line for line in f
                if line.strip() and json.loads(line)['round'] <= last_round]
    with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(kept)


def run_experiment(config, resume_from=None, dataset=None, subscribers=None):
    """Run an experiment end to end, writing its outputs

    Writes ``config.echo``, appends one line per round to
    ``metrics.jsonl`` and checkpoints under ``checkpoints/`` in the
    configured output directory.

    :param resume_from: A checkpoint to continue from. Metrics lines after
        its round are discarded before the remaining rounds are appended.

    :returns: The RoundReports of the rounds run.
    """
    output_dir = config.experiment.output_dir
    if not os.path.isdir(output_dir):
        os.makedirs(output_dir)
    with io.open(os.path.join(output_dir, CONFIG_ECHO_FILENAME), 'w',
                 encoding='utf-8', newline='\n') as f:
        f.write(format_config(config))

    metrics_path = os.path.join(output_dir, METRICS_FILENAME)
    all_subscribers = [
        MetricsFileSubscriber(metrics_path, config.experiment.record_timing),
        LoggingSubscriber(),
    ] + list(subscribers or [])
    runner = FederatedRunner(config, dataset=dataset,
                             subscribers=all_subscribers)
    if resume_from is not None:
        runner.restore(resume_from)
        _truncate_metrics(metrics_path, runner.round_num)
    elif os.path.exists(metrics_path):
        os.remove(metrics_path)
    return runner.run()
