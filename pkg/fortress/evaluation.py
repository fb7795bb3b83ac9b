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
"""Filtered top-K ranking and the HR, NDCG and exposure-ratio metrics"""
import collections
import logging
import math

import numpy as np

from fortress.data import adjacent_subsequences
from fortress.data import item_counts
from fortress.encoder import encode
from fortress.encoder import score_items
from fortress.exceptions import DataError


logger = logging.getLogger(__name__)


EvaluationResult = collections.namedtuple(
    'EvaluationResult', ['hr', 'ndcg', 'er', 'er_mean', 'results'])


class RankingResult(object):
    def __init__(self, user_id, order, k, target=None, consumed=None):
        """One user's filtered ranking

        :param order: Every non-excluded item id, best first.
        :param k: Length of the reported top-K list.
        :param target: The held-out test item, if any.
        :param consumed: Every item the user has interacted with, used for
            exposure eligibility.
        """
        self.user_id = user_id
        self.order = np.asarray(order, dtype=np.int64)
        self.k = k
        self.target = target
        self.consumed = frozenset(consumed or ())
        self._positions = dict(
            (int(item), position + 1)
            for position, item in enumerate(self.order))

    def __repr__(self):
        return 'RankingResult(user_id=%s, target=%s, target_rank=%s)' % (
            self.user_id, self.target, self.target_rank)

    @property
    def ranked(self):
        return [int(i) for i in self.order[:self.k]]

    def rank_of(self, item):
        """1-based filtered rank of ``item``, or None if it was excluded"""
        return self._positions.get(int(item))

    @property
    def target_rank(self):
        if self.target is None:
            return None
        return self.rank_of(self.target)

    def in_top(self, item, k):
        rank = self.rank_of(item)
        return rank is not None and rank <= k


def rank_from_scores(scores, k, exclude=(), user_id=None, target=None,
                     consumed=None):
    """Order items by descending score, ties by ascending id

    ``k`` larger than the number of rankable items is clamped with a
    warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    num_items = scores.shape[0]
    order = np.lexsort((np.arange(num_items), -scores))
    if exclude:
        excluded = np.zeros(num_items, dtype=bool)
        excluded[[int(i) for i in exclude if 0 <= int(i) < num_items]] = True
        order = order[~excluded[order]]
    if k > order.shape[0]:
        logger.warning('K=%s exceeds the %s rankable items; clamping',
                       k, order.shape[0])
        k = order.shape[0]
    return RankingResult(user_id, order, k, target=target, consumed=consumed)


def top_k(params, seq, k, exclude, user_id=None, target=None,
          consumed=None):
    """Rank every item not in ``exclude`` for the user history ``seq``"""
    h, _ = encode(params, seq)
    return rank_from_scores(score_items(params, h), k, exclude,
                            user_id=user_id, target=target,
                            consumed=consumed)


def _require_results(results):
    if not results:
        raise ValueError('Metrics need at least one ranking result')


def hr_at_k(results, k):
    _require_results(results)
    hits = sum(1 for r in results
               if r.target_rank is not None and r.target_rank <= k)
    return hits / len(results)


def ndcg_at_k(results, k):
    _require_results(results)
    total = 0.0
    for result in results:
        rank = result.target_rank
        if rank is not None and rank <= k:
            total += 1.0 / math.log2(1.0 + rank)
    return total / len(results)


def er_per_target(results, targets, k):
    """Exposure ratio of each target among users who never consumed it

    :returns: dict of target to ratio; a target with no eligible user maps
        to None.
    """
    exposure = {}
    for target in targets:
        eligible = [r for r in results if target not in r.consumed]
        if not eligible:
            logger.warning(
                'Target %s was consumed by every user; excluded from ER@%s',
                target, k)
            exposure[target] = None
            continue
        exposed = sum(1 for r in eligible if r.in_top(target, k))
        exposure[target] = exposed / len(eligible)
    return exposure


def er_at_k(results, targets, k):
    """Mean exposure ratio over targets with at least one eligible user"""
    if not targets:
        raise ValueError('ER@K needs at least one target item')
    values = [v for v in er_per_target(results, targets, k).values()
              if v is not None]
    if not values:
        return 0.0
    return sum(values) / len(values)


class ModelRanker(object):
    def __init__(self, params):
        self._params = params

    def scores(self, history):
        h, _ = encode(self._params, history)
        return score_items(self._params, h)


class PopularityRanker(object):
    """Ranks every user's items by global train-interaction count"""
    def __init__(self, dataset):
        self._counts = item_counts(dataset, train_only=True).astype(
            np.float64)

    def scores(self, history):
        return self._counts


class BigramOracle(object):
    """Ranks the planted favored successor of the last item first

    Only available for synthetic datasets, whose metadata carries the
    generator's successors and popularity prior.
    """
    def __init__(self, successors, prior):
        self._successors = np.asarray(successors, dtype=np.int64)
        self._prior = np.asarray(prior, dtype=np.float64)

    @classmethod
    def from_dataset(cls, dataset):
        metadata = dataset.metadata
        if 'successors' not in metadata:
            raise DataError('Dataset carries no planted transition structure')
        return cls(metadata['successors'], metadata['prior'])

    def scores(self, history):
        scores = self._prior.copy()
        scores[self._successors[int(history[-1])]] += 1.0
        return scores


def rank_users(ranker, dataset, k):
    """Filtered rankings of every split user's test target

    The history is everything before the test target; its items are
    excluded from the ranking.
    """
    results = []
    for user_id in dataset.user_ids:
        sequence = dataset.sequence(user_id)
        history = sequence.test_history
        results.append(rank_from_scores(
            ranker.scores(history), k, exclude=set(history),
            user_id=user_id, target=sequence.test_target,
            consumed=sequence.items))
    return results


def evaluate(params, dataset, ks, targets=None, ranker=None):
    """HR@K and NDCG@K for every K, and ER@K per target when given

    :param ranker: Ranks with this instead of the model when given.

    :rtype: EvaluationResult
    """
    ks = sorted(set(ks))
    ranker = ranker or ModelRanker(params)
    results = rank_users(ranker, dataset, max(ks))
    hr = dict((k, hr_at_k(results, k)) for k in ks)
    ndcg = dict((k, ndcg_at_k(results, k)) for k in ks)
    er, er_mean = {}, {}
    if targets:
        for k in ks:
            er[k] = er_per_target(results, targets, k)
            er_mean[k] = er_at_k(results, targets, k)
    return EvaluationResult(hr, ndcg, er, er_mean, results)


def embedding_drift(params, dataset, window):
    """Mean L2 distance between encodings of adjacent train windows"""
    drifts = []
    for user_id in dataset.user_ids:
        sequence = dataset.sequence(user_id)
        items = sequence.train_items if sequence.is_split else sequence.items
        pair = adjacent_subsequences(items, window)
        if pair is None:
            continue
        h_prev, _ = encode(params, pair[0])
        h_next, _ = encode(params, pair[1])
        drifts.append(float(np.linalg.norm(h_prev - h_next)))
    if not drifts:
        return 0.0
    return sum(drifts) / len(drifts)
