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
"""Server side of a round: sampling, aggregation and the embedding defense

Nothing in this module reads interaction data or provenance tags. Updates
are reduced to ``(client_id, params, n_u)`` by :func:`strip_provenance`
before any server logic sees them.
"""
import collections
import logging
import math

import numpy as np

from fortress.constants import AGGREGATION_RULES
from fortress.encoder import ModelParams
from fortress.exceptions import AggregationError
from fortress.numerics import cosine_sim_grads
from fortress.numerics import softmax
from fortress.utils import BaseConfig


logger = logging.getLogger(__name__)

# Backtracking retries of a defense step, each at a tenth of the last rate.
MAX_BACKTRACKS = 3


ServerUpdate = collections.namedtuple(
    'ServerUpdate', ['client_id', 'params', 'n_u'])

DefenseResult = collections.namedtuple(
    'DefenseResult',
    ['params', 'hot', 'suspicious', 'sep_loss', 'var_loss', 'backtracks'])


class ServerConfig(BaseConfig):
    SECTION = 'server'
    FIELD_TYPES = {
        'aggregation': str,
        'trim_fraction': float,
        'norm_bound': float,
    }

    def __init__(self, aggregation='fedavg', trim_fraction=0.1,
                 norm_bound=1.0):
        """Aggregation settings

        :param aggregation: ``fedavg`` (default), ``median``,
            ``trimmed_mean`` or ``norm_bounded``.
        :param trim_fraction: Fraction trimmed from each end per coordinate
            by ``trimmed_mean``.
        :param norm_bound: Largest delta norm kept by ``norm_bounded``.
        """
        self.aggregation = aggregation
        self.trim_fraction = trim_fraction
        self.norm_bound = norm_bound
        self._validate()

    def _validate(self):
        self._require(self.aggregation in AGGREGATION_RULES, 'aggregation',
                      'must be one of %s' % ', '.join(AGGREGATION_RULES))
        self._require(0.0 <= self.trim_fraction < 0.5, 'trim_fraction',
                      'must be in [0, 0.5)')
        self._require(self.norm_bound > 0, 'norm_bound', 'must be > 0')


class DefenseHyper(BaseConfig):
    SECTION = 'defense'
    FIELD_TYPES = {
        'lambda_sep': float,
        'lambda_var': float,
        'tau_sep': float,
        'hot_fraction': float,
        'sp_fraction': float,
        'neighborhood_k': int,
        'server_lr': float,
        'ema_beta': float,
        'drift_percentile': float,
        'touch_threshold': float,
        'defense_every': int,
        'defense_steps': int,
    }

    def __init__(self, lambda_sep=0.1, lambda_var=0.1, tau_sep=0.5,
                 hot_fraction=0.05, sp_fraction=0.05, neighborhood_k=5,
                 server_lr=0.1, ema_beta=0.9, drift_percentile=90.0,
                 touch_threshold=1.0, defense_every=1, defense_steps=1):
        """Server defense hyperparameters

        :param lambda_sep: Weight of the hot/suspicious separation loss.
        :param lambda_var: Weight of the hot-neighbourhood variance loss.
        :param tau_sep: Temperature of the separation loss.
        :param hot_fraction: Share of items placed in the hot set.
        :param sp_fraction: Frequency quantile at or below which an item
            counts as low visibility, and the cap on the share of items in
            the suspicious set.
        :param neighborhood_k: Neighbourhood size of the variance loss,
            counting the item itself.
        :param server_lr: Step size of the defense step.
        :param ema_beta: Decay of the update-magnitude average.
        :param drift_percentile: Low-visibility items must drift toward the
            hot centroid by more than this percentile to be suspicious.
        :param touch_threshold: A client touches a row when that row's delta
            norm exceeds this multiple of the client's mean row-delta norm.
            Zero counts every nonzero row.
        :param defense_every: Run the defense every this many rounds.
        :param defense_steps: Gradient steps per defense run.
        """
        self.lambda_sep = lambda_sep
        self.lambda_var = lambda_var
        self.tau_sep = tau_sep
        self.hot_fraction = hot_fraction
        self.sp_fraction = sp_fraction
        self.neighborhood_k = neighborhood_k
        self.server_lr = server_lr
        self.ema_beta = ema_beta
        self.drift_percentile = drift_percentile
        self.touch_threshold = touch_threshold
        self.defense_every = defense_every
        self.defense_steps = defense_steps
        self._validate()

    def _validate(self):
        self._require(self.lambda_sep >= 0, 'lambda_sep', 'must be >= 0')
        self._require(self.lambda_var >= 0, 'lambda_var', 'must be >= 0')
        self._require(self.tau_sep > 0, 'tau_sep', 'must be > 0')
        self._require(0 < self.hot_fraction < 1, 'hot_fraction',
                      'must be in (0, 1)')
        self._require(0 < self.sp_fraction < 1, 'sp_fraction',
                      'must be in (0, 1)')
        self._require(self.hot_fraction + self.sp_fraction <= 1,
                      'sp_fraction', 'hot_fraction + sp_fraction must be <= 1')
        self._require(self.neighborhood_k >= 2, 'neighborhood_k',
                      'must be >= 2')
        self._require(self.server_lr > 0, 'server_lr', 'must be > 0')
        self._require(0 <= self.ema_beta < 1, 'ema_beta', 'must be in [0, 1)')
        self._require(0 <= self.drift_percentile <= 100, 'drift_percentile',
                      'must be in [0, 100]')
        self._require(self.touch_threshold >= 0, 'touch_threshold',
                      'must be >= 0')
        self._require(self.defense_every >= 1, 'defense_every',
                      'must be >= 1')
        self._require(self.defense_steps >= 1, 'defense_steps',
                      'must be >= 1')

    @property
    def enabled(self):
        return self.lambda_sep > 0 or self.lambda_var > 0


class PopularityState(object):
    """Per-item statistics the server derives from updates alone

    * ``magnitude``: EMA of the mean per-update row-delta norm
    * ``frequency``: how many updates have touched each row so far
    * ``drift``: this round's cosine displacement toward the hot centroid
    """
    def __init__(self, num_items, magnitude=None, frequency=None,
                 drift=None, rounds=0):
        self.num_items = num_items
        self.magnitude = _or_zeros(magnitude, num_items, np.float64)
        self.frequency = _or_zeros(frequency, num_items, np.int64)
        self.drift = _or_zeros(drift, num_items, np.float64)
        self.rounds = rounds

    def __repr__(self):
        return 'PopularityState(num_items=%s, rounds=%s)' % (
            self.num_items, self.rounds)

    def copy(self):
        return PopularityState(
            self.num_items, self.magnitude.copy(), self.frequency.copy(),
            self.drift.copy(), self.rounds)

    def as_arrays(self):
        return {
            'magnitude': self.magnitude,
            'frequency': self.frequency,
            'drift': self.drift,
            'rounds': np.array(self.rounds, dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays):
        magnitude = np.asarray(arrays['magnitude'], dtype=np.float64)
        return cls(
            magnitude.shape[0], magnitude,
            np.asarray(arrays['frequency'], dtype=np.int64),
            np.asarray(arrays['drift'], dtype=np.float64),
            int(arrays['rounds']))


def _or_zeros(values, size, dtype):
    if values is None:
        return np.zeros(size, dtype=dtype)
    return np.array(values, dtype=dtype)


def strip_provenance(update):
    """Reduce a client update to what the server may see"""
    if isinstance(update, ServerUpdate):
        return update
    return ServerUpdate(update.client_id, update.params, update.n_u)


def _sorted_updates(updates):
    stripped = [strip_provenance(u) for u in updates]
    if not stripped:
        raise AggregationError('Cannot aggregate an empty update list')
    return sorted(stripped, key=lambda u: (u.client_id is None, u.client_id))


def sample_clients(all_clients, fraction, round_num, rng):
    """Uniformly sample ``max(1, ceil(fraction * N))`` clients

    :param rng: The round's sampling generator, derived from the base seed
        and ``round_num``.

    :returns: The sampled ids, sorted.
    """
    if not 0 < fraction <= 1:
        raise ValueError('fraction must be in (0, 1], got %r' % fraction)
    population = sorted(all_clients)
    size = min(len(population),
               max(1, int(math.ceil(fraction * len(population)))))
    chosen = rng.choice(len(population), size, replace=False)
    logger.debug('Round %s sampled %s of %s clients', round_num, size,
                 len(population))
    return sorted(population[int(i)] for i in chosen)


def aggregate(updates):
    """Weighted FedAvg: ``sum_u (n_u / sum_k n_k) * params_u``

    Summation runs in client id order, so any permutation of ``updates``
    gives a bit-identical result.

    :raises AggregationError: If ``updates`` is empty or the total weight
        is zero.
    """
    ordered = _sorted_updates(updates)
    total = sum(u.n_u for u in ordered)
    if total <= 0:
        raise AggregationError(
            'Total update weight is %s, cannot aggregate' % total)
    result = ordered[0].params.zeros_like()
    for update in ordered:
        result = result.add(update.params.scale(update.n_u / total))
    return result


def _stack(ordered):
    return [np.stack([getattr(u.params, name) for u in ordered])
            for name in ModelParams.FIELDS]


def coordinate_median(updates):
    """Unweighted coordinate-wise median of the client parameters"""
    ordered = _sorted_updates(updates)
    return ModelParams(*[np.median(stack, axis=0)
                         for stack in _stack(ordered)])


def trimmed_mean(updates, trim_fraction):
    """Coordinate-wise mean after dropping ``floor(trim_fraction * n)``
    values from each end
    """
    ordered = _sorted_updates(updates)
    cut = int(math.floor(trim_fraction * len(ordered)))
    arrays = []
    for stack in _stack(ordered):
        ranked = np.sort(stack, axis=0)
        arrays.append(ranked[cut:len(ordered) - cut].mean(axis=0))
    return ModelParams(*arrays)


def norm_bounded_mean(updates, global_params, norm_bound):
    """FedAvg over deltas clipped to ``norm_bound``"""
    clipped = []
    for update in _sorted_updates(updates):
        delta = update.params.sub(global_params)
        delta_norm = delta.norm()
        if delta_norm > norm_bound:
            delta = delta.scale(norm_bound / delta_norm)
        clipped.append(ServerUpdate(
            update.client_id, global_params.add(delta), update.n_u))
    return aggregate(clipped)


def aggregate_updates(updates, config, global_params):
    """Aggregate with the rule selected by a ServerConfig"""
    if config.aggregation == 'median':
        return coordinate_median(updates)
    if config.aggregation == 'trimmed_mean':
        return trimmed_mean(updates, config.trim_fraction)
    if config.aggregation == 'norm_bounded':
        return norm_bounded_mean(updates, global_params, config.norm_bound)
    return aggregate(updates)


def hot_centroid(embeddings, hot):
    if not len(hot):
        return None
    return embeddings[list(hot)].mean(axis=0)


def _top_by(values, size):
    """Indices of the ``size`` largest values, lower index first on ties"""
    order = np.lexsort((np.arange(values.shape[0]), -values))
    return [int(i) for i in order[:size]]


def hot_set(magnitude, hot_fraction):
    size = min(magnitude.shape[0],
               int(math.ceil(hot_fraction * magnitude.shape[0])))
    return sorted(_top_by(magnitude, size))


def _row_cosines(rows, centroid):
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(centroid)
    dots = rows.dot(centroid)
    with np.errstate(divide='ignore', invalid='ignore'):
        cosines = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0),
                           0.0)
    return np.clip(cosines, -1.0, 1.0)


def update_popularity(state, updates, new_params, global_params, hyper):
    """Fold one round of updates into the popularity statistics

    :param state: The PopularityState before this round; not modified.
    :param updates: This round's updates (provenance is ignored).
    :param new_params: The aggregate produced this round.
    :param global_params: The global model the clients started from.
    :param hyper: DefenseHyper giving ``ema_beta``, ``hot_fraction`` and
        ``touch_threshold``.

    :returns: A new PopularityState.
    """
    num_items = state.num_items
    base = global_params.item_embeddings[:num_items]
    mean_norms = np.zeros(num_items)
    touched = np.zeros(num_items, dtype=np.int64)
    ordered = _sorted_updates(updates)
    for update in ordered:
        delta = update.params.item_embeddings[:num_items] - base
        row_norms = np.linalg.norm(delta, axis=1)
        mean_norms += row_norms
        cutoff = hyper.touch_threshold * row_norms.mean()
        touched += ((row_norms > cutoff) & (row_norms > 0)).astype(np.int64)
    mean_norms /= len(ordered)

    beta = hyper.ema_beta
    new_state = PopularityState(
        num_items,
        magnitude=beta * state.magnitude + (1.0 - beta) * mean_norms,
        frequency=state.frequency + touched,
        rounds=state.rounds + 1)

    new_rows = new_params.item_embeddings[:num_items]
    centroid = hot_centroid(
        new_rows, hot_set(new_state.magnitude, hyper.hot_fraction))
    new_state.drift = (_row_cosines(new_rows, centroid) -
                       _row_cosines(base, centroid))
    return new_state


def identify_sets(state, hyper):
    """Derive the hot and suspicious item sets

    Hot items are the ``ceil(hot_fraction * M)`` largest by update
    magnitude. Suspicious items are the non-hot items in the bottom
    ``sp_fraction`` quantile of update frequency whose
    drift toward the hot centroid is positive and above the
    ``drift_percentile``, largest drift first, capped at
    ``ceil(sp_fraction * M)``.

    :returns: ``(hot, suspicious)`` as sorted id lists, both empty before
        the first completed round.
    """
    if state.rounds == 0:
        return [], []
    hot = hot_set(state.magnitude, hyper.hot_fraction)
    frequency_cutoff = np.quantile(
        state.frequency.astype(np.float64), hyper.sp_fraction)
    drift_cutoff = np.percentile(state.drift, hyper.drift_percentile)
    candidates = (
        (state.frequency <= frequency_cutoff) &
        (state.drift > drift_cutoff) &
        (state.drift > 0))
    candidates[hot] = False
    cap = int(math.ceil(hyper.sp_fraction * state.num_items))
    ranked = _top_by(np.where(candidates, state.drift, -np.inf),
                     int(np.sum(candidates)))
    return hot, sorted(ranked[:cap])


def sep_loss(embeddings, hot, suspicious, tau_sep):
    """Separation loss between hot and suspicious rows

    ``sum_{i in hot} -log(exp(1/tau) / sum_{j in sp} exp(sim(v_i, v_j)/tau))``
    with cosine similarity.

    :returns: ``(loss, grads)`` where ``grads`` has the shape of
        ``embeddings`` and is zero outside the listed rows.
    """
    grads = np.zeros_like(embeddings)
    if not len(hot) or not len(suspicious):
        return 0.0, grads
    loss = 0.0
    for i in hot:
        sims, grads_i, grads_j = [], [], []
        for j in suspicious:
            sim, d_i, d_j = cosine_sim_grads(embeddings[i], embeddings[j])
            sims.append(sim / tau_sep)
            grads_i.append(d_i)
            grads_j.append(d_j)
        sims = np.array(sims)
        peak = np.max(sims)
        loss += -1.0 / tau_sep + peak + math.log(np.sum(np.exp(sims - peak)))
        weights = softmax(sims) / tau_sep
        for weight, j, d_i, d_j in zip(weights, suspicious, grads_i,
                                       grads_j):
            grads[i] += weight * d_i
            grads[j] += weight * d_j
    return loss, grads


def neighborhood(embeddings, item, size):
    """The ``size`` rows nearest to ``item`` by cosine, itself included"""
    size = min(size, embeddings.shape[0])
    sims = _row_cosines(embeddings, embeddings[item])
    sims[item] = np.inf
    return _top_by(sims, size)


def var_loss(embeddings, hot, neighborhood_k):
    """Sum over hot items of the per-dimension variance of their
    neighbourhood, averaged over dimensions

    Neighbourhoods are recomputed on every call and held fixed for the
    gradient.
    """
    grads = np.zeros_like(embeddings)
    loss = 0.0
    dim = embeddings.shape[1]
    for i in hot:
        members = neighborhood(embeddings, i, neighborhood_k)
        rows = embeddings[members]
        centered = rows - rows.mean(axis=0)
        loss += float(np.mean(np.var(rows, axis=0)))
        np.add.at(grads, members,
                  2.0 * centered / (dim * len(members)))
    return loss, grads


def server_loss(embeddings, hot, suspicious, hyper):
    """``lambda_sep * sep + lambda_var * var`` and its gradient

    :returns: ``(total, grads, sep, var)``
    """
    sep = var = 0.0
    grads = np.zeros_like(embeddings)
    if hyper.lambda_sep > 0:
        sep, sep_grads = sep_loss(embeddings, hot, suspicious, hyper.tau_sep)
        grads += hyper.lambda_sep * sep_grads
    if hyper.lambda_var > 0:
        var, var_grads = var_loss(embeddings, hot, hyper.neighborhood_k)
        grads += hyper.lambda_var * var_grads
    return hyper.lambda_sep * sep + hyper.lambda_var * var, grads, sep, var


def run_defense(params, state, hyper):
    """Gradient steps on the item-embedding rows against the server loss

    A step that would increase the loss is retried at a tenth of the rate
    up to ``MAX_BACKTRACKS`` times, then dropped. Encoder weights and the
    mask row are never changed.

    :returns: A DefenseResult.
    """
    hot, suspicious = identify_sets(state, hyper)
    if not hyper.enabled or not hot:
        return DefenseResult(params, hot, suspicious, 0.0, 0.0, 0)
    num_items = params.num_items
    table = params.item_embeddings[:num_items].copy()
    backtracks = 0
    loss, grads, sep, var = server_loss(table, hot, suspicious, hyper)
    for _ in range(hyper.defense_steps):
        lr = hyper.server_lr
        for attempt in range(MAX_BACKTRACKS + 1):
            candidate = table - lr * grads
            new_loss, new_grads, new_sep, new_var = server_loss(
                candidate, hot, suspicious, hyper)
            if new_loss <= loss:
                table = candidate
                loss, grads, sep, var = new_loss, new_grads, new_sep, new_var
                break
            backtracks += 1
            lr /= 10.0
        else:
            logger.warning(
                'Defense step did not decrease the server loss after %s '
                'backtracks; keeping embeddings', MAX_BACKTRACKS)
            break
    embeddings = params.item_embeddings.copy()
    embeddings[:num_items] = table
    fields = dict(params.items())
    fields['item_embeddings'] = embeddings
    return DefenseResult(
        ModelParams(**fields), hot, suspicious, sep, var, backtracks)


def defense_step(params, state, hyper):
    """The defended parameters; see :func:`run_defense`"""
    return run_defense(params, state, hyper).params
