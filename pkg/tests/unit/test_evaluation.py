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
import math

import numpy as np

from tests import make_split_dataset
from tests import make_toy_params
from tests import mock
from tests import unittest
from fortress.data import synth_generate
from fortress.data import leave_one_out_split
from fortress.encoder import encode
from fortress.encoder import score_items
from fortress.evaluation import BigramOracle
from fortress.evaluation import PopularityRanker
from fortress.evaluation import RankingResult
from fortress.evaluation import embedding_drift
from fortress.evaluation import er_at_k
from fortress.evaluation import er_per_target
from fortress.evaluation import evaluate
from fortress.evaluation import hr_at_k
from fortress.evaluation import ndcg_at_k
from fortress.evaluation import rank_from_scores
from fortress.evaluation import top_k
from fortress.exceptions import DataError


class TestRankFromScores(unittest.TestCase):
    def test_descending_scores(self):
        result = rank_from_scores([0.1, 0.9, 0.5, 0.3], 2)
        self.assertEqual(result.ranked, [1, 2])
        self.assertEqual(result.rank_of(0), 4)

    def test_ties_go_to_lower_id(self):
        result = rank_from_scores([1.0, 2.0, 2.0, 1.0], 4)
        self.assertEqual(result.ranked, [1, 2, 0, 3])

    def test_excluded_items_do_not_take_ranks(self):
        result = rank_from_scores([0.1, 0.9, 0.5, 0.3], 3, exclude={1})
        self.assertEqual(result.ranked, [2, 3, 0])
        self.assertIsNone(result.rank_of(1))
        self.assertEqual(result.rank_of(2), 1)

    def test_k_is_clamped(self):
        with mock.patch('fortress.evaluation.logger') as logger:
            result = rank_from_scores([0.1, 0.9, 0.5], 10, exclude={0})
        self.assertEqual(result.ranked, [1, 2])
        self.assertTrue(logger.warning.called)

    def test_top_k_matches_brute_force(self):
        params = make_toy_params(num_items=12, dim=4, seed=5)
        history = [3, 7, 1]
        h, _ = encode(params, history)
        scores = score_items(params, h)
        expected = [i for i in sorted(range(12), key=lambda i: (-scores[i], i))
                    if i not in history][:5]
        self.assertEqual(top_k(params, history, 5, set(history)).ranked,
                         expected)


class TestMetrics(unittest.TestCase):
    def results(self):
        # Targets ranked 1, 3 and 6 among six items.
        return [
            RankingResult(0, [5, 1, 2, 3, 4, 0], 6, target=5),
            RankingResult(1, [0, 1, 5, 3, 4, 2], 6, target=5),
            RankingResult(2, [0, 1, 2, 3, 4, 5], 6, target=5),
        ]

    def test_hit_ratio(self):
        results = self.results()
        self.assertAlmostEqual(hr_at_k(results, 1), 1 / 3)
        self.assertAlmostEqual(hr_at_k(results, 3), 2 / 3)
        self.assertAlmostEqual(hr_at_k(results, 6), 1.0)

    def test_ndcg(self):
        results = self.results()
        expected = (1.0 + 1 / math.log2(4)) / 3
        self.assertAlmostEqual(ndcg_at_k(results, 5), expected)

    def test_monotone_in_k(self):
        results = self.results()
        for k in range(1, 6):
            self.assertLessEqual(hr_at_k(results, k), hr_at_k(results, k + 1))
            self.assertLessEqual(ndcg_at_k(results, k),
                                 ndcg_at_k(results, k + 1))

    def test_ndcg_never_exceeds_hit_ratio(self):
        results = self.results()
        for k in range(1, 7):
            self.assertLessEqual(ndcg_at_k(results, k), hr_at_k(results, k))

    def test_excluded_target_is_a_miss(self):
        result = rank_from_scores([0.5, 0.4], 2, exclude={0}, target=0)
        self.assertEqual(hr_at_k([result], 2), 0.0)

    def test_empty_results(self):
        with self.assertRaises(ValueError):
            hr_at_k([], 5)
        with self.assertRaises(ValueError):
            ndcg_at_k([], 5)


class TestExposureRatio(unittest.TestCase):
    def setUp(self):
        self.results = [
            RankingResult(0, [4, 1, 2], 3, consumed=[0, 3]),
            RankingResult(1, [1, 2, 3], 3, consumed=[0, 4]),
            RankingResult(2, [2, 3, 4], 3, consumed=[0, 1]),
            RankingResult(3, [2, 1, 0], 3, consumed=[3, 4]),
        ]

    def test_per_target(self):
        exposure = er_per_target(self.results, [4], 1)
        # Only users 0 and 2 never consumed item 4; user 0 sees it first.
        self.assertAlmostEqual(exposure[4], 1 / 2)

    def test_grows_with_k(self):
        self.assertAlmostEqual(er_per_target(self.results, [4], 3)[4], 1.0)

    def test_target_consumed_by_everyone(self):
        results = [RankingResult(0, [1, 2], 2, consumed=[0]),
                   RankingResult(1, [1, 2], 2, consumed=[0])]
        self.assertIsNone(er_per_target(results, [0], 2)[0])
        self.assertEqual(er_at_k(results, [0], 2), 0.0)

    def test_mean_over_targets(self):
        expected = (er_per_target(self.results, [4], 2)[4] +
                    er_per_target(self.results, [1], 2)[1]) / 2
        self.assertAlmostEqual(er_at_k(self.results, [4, 1], 2), expected)

    def test_requires_targets(self):
        with self.assertRaises(ValueError):
            er_at_k(self.results, [], 5)


class TestEvaluate(unittest.TestCase):
    def setUp(self):
        self.dataset = make_split_dataset(
            [[0, 1, 2, 3, 4], [5, 4, 3, 2], [1, 3, 5, 7]], num_items=9)
        self.params = make_toy_params(num_items=9, dim=4, seed=2)

    def test_metrics_per_k(self):
        result = evaluate(self.params, self.dataset, [5, 1, 5])
        self.assertEqual(sorted(result.hr), [1, 5])
        self.assertEqual(len(result.results), 3)
        self.assertEqual(result.er, {})
        self.assertLessEqual(result.hr[1], result.hr[5])

    def test_history_is_excluded(self):
        result = evaluate(self.params, self.dataset, [3])
        for ranking in result.results:
            history = self.dataset.sequence(ranking.user_id).test_history
            self.assertFalse(set(ranking.ranked) & set(history))

    def test_exposure_for_targets(self):
        result = evaluate(self.params, self.dataset, [3], targets=[8])
        self.assertIn(8, result.er[3])
        self.assertEqual(result.er_mean[3], result.er[3][8])

    def test_popularity_ranker(self):
        dataset = make_split_dataset(
            [[2, 2, 1, 0, 6], [2, 1, 3, 5], [2, 1, 4, 6]], num_items=8)
        result = evaluate(None, dataset, [1],
                          ranker=PopularityRanker(dataset))
        # Items 2 and 1 lead in train counts but every history holds them.
        for ranking in result.results:
            self.assertEqual(ranking.ranked, [3] if ranking.user_id == 0
                             else [0])

    def test_bigram_oracle(self):
        dataset = leave_one_out_split(synth_generate(
            100, 50, (6, 10), transition_skew=1.0, seed=1))
        oracle = BigramOracle.from_dataset(dataset)
        result = evaluate(None, dataset, [1], ranker=oracle)
        self.assertGreater(result.hr[1], 0.8)

    def test_oracle_requires_planted_structure(self):
        with self.assertRaises(DataError):
            BigramOracle.from_dataset(self.dataset)


class TestEmbeddingDrift(unittest.TestCase):
    def test_matches_direct_computation(self):
        params = make_toy_params(num_items=9, dim=4, seed=2)
        dataset = make_split_dataset([[0, 1, 2, 3, 4, 5, 6, 7]], num_items=9)
        drift = embedding_drift(params, dataset, 3)
        h_prev, _ = encode(params, [2, 3, 4])
        h_next, _ = encode(params, [3, 4, 5])
        self.assertAlmostEqual(drift, np.linalg.norm(h_prev - h_next))

    def test_short_sequences(self):
        params = make_toy_params(num_items=9, dim=4)
        dataset = make_split_dataset([[0, 1, 2]], num_items=9)
        self.assertEqual(embedding_drift(params, dataset, 3), 0.0)
