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

from tests import make_toy_params
from tests import unittest
from fortress.client import ClientUpdate
from fortress.constants import PROVENANCE_BENIGN
from fortress.encoder import ModelParams
from fortress.encoder import init_params
from fortress.exceptions import AggregationError
from fortress.exceptions import InvalidConfigValueError
from fortress.numerics import finite_diff_check
from fortress.server import DefenseHyper
from fortress.server import PopularityState
from fortress.server import ServerConfig
from fortress.server import ServerUpdate
from fortress.server import aggregate
from fortress.server import aggregate_updates
from fortress.server import coordinate_median
from fortress.server import defense_step
from fortress.server import identify_sets
from fortress.server import neighborhood
from fortress.server import norm_bounded_mean
from fortress.server import run_defense
from fortress.server import sample_clients
from fortress.server import sep_loss
from fortress.server import server_loss
from fortress.server import strip_provenance
from fortress.server import trimmed_mean
from fortress.server import update_popularity
from fortress.server import var_loss


def constant_params(value, num_items=4, dim=3):
    template = init_params(num_items, dim, seed=0)
    return ModelParams(**dict(
        (name, np.full(shape, float(value)))
        for name, shape in template.shapes.items()))


class TestAggregate(unittest.TestCase):
    def test_weighted_average(self):
        updates = [ServerUpdate(0, constant_params(0.0), 1),
                   ServerUpdate(1, constant_params(4.0), 3)]
        result = aggregate(updates)
        for _, array in result.items():
            np.testing.assert_allclose(array, 3.0)

    def test_identical_updates_are_a_fixed_point(self):
        params = make_toy_params()
        updates = [ServerUpdate(i, params, n) for i, n in enumerate([2, 5])]
        self.assertTrue(aggregate(updates).allclose(params, atol=1e-15))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            updates = [
                ServerUpdate(i, make_toy_params(seed=trial * 3 + i),
                             int(rng.integers(1, 20)))
                for i in range(3)]
            total = sum(u.n_u for u in updates)
            expected = sum(
                u.params.to_vector() * u.n_u for u in updates) / total
            np.testing.assert_allclose(
                aggregate(updates).to_vector(), expected, rtol=0, atol=1e-12)

    def test_permutation_is_bitwise_invariant(self):
        updates = [ServerUpdate(i, make_toy_params(seed=i), i + 1)
                   for i in range(5)]
        forward = aggregate(updates)
        shuffled = [updates[i] for i in [3, 0, 4, 2, 1]]
        self.assertTrue(forward.array_equal(aggregate(shuffled)))

    def test_zero_weight_raises(self):
        updates = [ServerUpdate(0, constant_params(1.0), 0)]
        with self.assertRaises(AggregationError):
            aggregate(updates)

    def test_empty_raises(self):
        with self.assertRaises(AggregationError):
            aggregate([])

    def test_accepts_client_updates(self):
        update = ClientUpdate(
            params=constant_params(2.0), n_u=4, provenance=PROVENANCE_BENIGN,
            client_id=0, round_num=1)
        stripped = strip_provenance(update)
        self.assertEqual(stripped, ServerUpdate(0, update.params, 4))
        np.testing.assert_allclose(aggregate([update]).w_z, 2.0)


class TestRobustAggregation(unittest.TestCase):
    def setUp(self):
        self.updates = [ServerUpdate(i, constant_params(v), 1)
                        for i, v in enumerate([0.0, 1.0, 10.0, 2.0, 3.0])]

    def test_median(self):
        result = coordinate_median(self.updates)
        np.testing.assert_allclose(result.b_h, 2.0)

    def test_trimmed_mean(self):
        result = trimmed_mean(self.updates, 0.2)
        np.testing.assert_allclose(result.item_embeddings, 2.0)

    def test_zero_trim_is_unweighted_mean(self):
        result = trimmed_mean(self.updates, 0.0)
        np.testing.assert_allclose(result.out_proj, 3.2)

    def test_norm_bounded_mean(self):
        global_params = constant_params(0.0)
        updates = [ServerUpdate(0, constant_params(1.0), 1)]
        result = norm_bounded_mean(updates, global_params, 0.5)
        self.assertAlmostEqual(result.sub(global_params).norm(), 0.5)

    def test_norm_bound_keeps_small_deltas(self):
        global_params = constant_params(0.0)
        updates = [ServerUpdate(0, constant_params(0.01), 1)]
        result = norm_bounded_mean(updates, global_params, 100.0)
        self.assertTrue(result.allclose(updates[0].params))

    def test_dispatch(self):
        config = ServerConfig(aggregation='median')
        result = aggregate_updates(self.updates, config, None)
        np.testing.assert_allclose(result.w_h, 2.0)
        result = aggregate_updates(self.updates, ServerConfig(), None)
        np.testing.assert_allclose(result.w_h, 3.2)

    def test_rejects_unknown_rule(self):
        with self.assertRaises(InvalidConfigValueError):
            ServerConfig(aggregation='krum')


class TestSampleClients(unittest.TestCase):
    def test_size_and_order(self):
        chosen = sample_clients(range(10), 0.25, 1,
                                np.random.default_rng(0))
        self.assertEqual(len(chosen), 3)
        self.assertEqual(chosen, sorted(chosen))
        self.assertTrue(set(chosen) <= set(range(10)))

    def test_deterministic(self):
        first = sample_clients(range(50), 0.1, 4, np.random.default_rng(9))
        second = sample_clients(range(50), 0.1, 4, np.random.default_rng(9))
        self.assertEqual(first, second)

    def test_full_participation(self):
        self.assertEqual(
            sample_clients([4, 2, 0], 1.0, 1, np.random.default_rng(0)),
            [0, 2, 4])

    def test_at_least_one(self):
        chosen = sample_clients(range(10), 0.001, 1,
                                np.random.default_rng(0))
        self.assertEqual(len(chosen), 1)

    def test_rejects_bad_fraction(self):
        for fraction in (0.0, 1.5, -0.1):
            with self.assertRaises(ValueError):
                sample_clients(range(10), fraction, 1,
                               np.random.default_rng(0))


class TestUpdatePopularity(unittest.TestCase):
    def setUp(self):
        self.global_params = init_params(10, 4, seed=0)
        self.hyper = DefenseHyper(ema_beta=0.5, hot_fraction=0.1)

    def moved(self, rows, amount):
        params = self.global_params.copy()
        for row in rows:
            params.item_embeddings[row, 0] += amount
        return params

    def test_zero_deltas_decay_magnitude(self):
        state = PopularityState(10, magnitude=np.arange(10.0), rounds=3)
        updates = [ServerUpdate(0, self.global_params.copy(), 1)]
        new_state = update_popularity(
            state, updates, self.global_params, self.global_params,
            self.hyper)
        np.testing.assert_allclose(new_state.magnitude, 0.5 * np.arange(10))
        np.testing.assert_array_equal(new_state.frequency, 0)
        self.assertEqual(new_state.rounds, 4)

    def test_input_state_is_not_modified(self):
        state = PopularityState(10, magnitude=np.ones(10))
        updates = [ServerUpdate(0, self.moved([3], 1.0), 1)]
        update_popularity(state, updates, self.global_params,
                          self.global_params, self.hyper)
        np.testing.assert_array_equal(state.magnitude, 1.0)
        self.assertEqual(state.rounds, 0)

    def test_no_decay_is_mean_row_norm(self):
        hyper = DefenseHyper(ema_beta=0.0)
        updates = [ServerUpdate(0, self.moved([2], 1.0), 1),
                   ServerUpdate(1, self.moved([2, 5], 3.0), 1)]
        new_state = update_popularity(
            PopularityState(10, magnitude=np.full(10, 7.0)), updates,
            self.global_params, self.global_params, hyper)
        expected = np.zeros(10)
        expected[2] = 2.0
        expected[5] = 1.5
        np.testing.assert_allclose(new_state.magnitude, expected)

    def test_touch_counts(self):
        updates = [ServerUpdate(0, self.moved([2], 1.0), 1),
                   ServerUpdate(1, self.moved([2, 5], 3.0), 1)]
        new_state = update_popularity(
            PopularityState(10), updates, self.global_params,
            self.global_params, self.hyper)
        expected = np.zeros(10, dtype=np.int64)
        expected[2] = 2
        expected[5] = 1
        np.testing.assert_array_equal(new_state.frequency, expected)

    def test_uniform_updates_touch_every_row(self):
        hyper = DefenseHyper(touch_threshold=0.0)
        updates = [ServerUpdate(i, self.moved(range(10), 0.1 * (i + 1)), 1)
                   for i in range(3)]
        new_state = update_popularity(
            PopularityState(10), updates, self.global_params,
            self.global_params, hyper)
        np.testing.assert_array_equal(new_state.frequency, 3)

    def test_state_round_trips_through_arrays(self):
        state = PopularityState(3, magnitude=[1.0, 2.0, 3.0],
                                frequency=[0, 4, 1], drift=[0.1, 0, -0.2],
                                rounds=6)
        restored = PopularityState.from_arrays(state.as_arrays())
        np.testing.assert_array_equal(restored.magnitude, state.magnitude)
        np.testing.assert_array_equal(restored.frequency, state.frequency)
        np.testing.assert_array_equal(restored.drift, state.drift)
        self.assertEqual(restored.rounds, 6)


class TestIdentifySets(unittest.TestCase):
    def setUp(self):
        self.hyper = DefenseHyper(hot_fraction=0.1, sp_fraction=0.05,
                                  drift_percentile=90.0)
        self.magnitude = np.ones(20)
        self.magnitude[[0, 1]] = 5.0
        self.frequency = np.full(20, 10)
        self.drift = np.zeros(20)
        self.drift[0] = 0.9
        self.drift[7] = 0.5

    def state(self):
        return PopularityState(20, self.magnitude, self.frequency,
                               self.drift, rounds=1)

    def test_empty_before_first_round(self):
        self.assertEqual(identify_sets(PopularityState(20), self.hyper),
                         ([], []))

    def test_hot_set_size(self):
        hot, _ = identify_sets(self.state(), self.hyper)
        self.assertEqual(hot, [0, 1])
        self.assertEqual(len(hot), int(math.ceil(0.1 * 20)))

    def test_drifted_low_visibility_item_is_suspicious(self):
        hot, suspicious = identify_sets(self.state(), self.hyper)
        self.assertEqual(suspicious, [7])
        self.assertFalse(set(hot) & set(suspicious))

    def test_frequently_updated_item_is_not_suspicious(self):
        self.frequency[7] = 100
        _, suspicious = identify_sets(self.state(), self.hyper)
        self.assertEqual(suspicious, [])

    def test_only_the_bottom_frequency_quantile_is_low_visibility(self):
        hyper = DefenseHyper(hot_fraction=0.05, sp_fraction=0.05)
        magnitude = np.ones(100)
        magnitude[95:] = 5.0
        frequency = np.arange(100)
        drift = np.zeros(100)
        drift[85] = 0.8
        state = PopularityState(100, magnitude, frequency, drift, rounds=1)
        self.assertEqual(identify_sets(state, hyper)[1], [])

        drift[3] = 0.8
        state = PopularityState(100, magnitude, frequency, drift, rounds=1)
        self.assertEqual(identify_sets(state, hyper)[1], [3])

    def test_identical_statistics_give_no_suspicious_items(self):
        state = PopularityState(20, np.ones(20), np.full(20, 3),
                                np.full(20, 0.2), rounds=5)
        _, suspicious = identify_sets(state, self.hyper)
        self.assertEqual(suspicious, [])

    def test_suspicious_set_is_capped_by_drift(self):
        self.drift[[8, 9]] = [0.6, 0.4]
        hyper = DefenseHyper(hot_fraction=0.1, sp_fraction=0.05,
                             drift_percentile=50.0)
        _, suspicious = identify_sets(self.state(), hyper)
        self.assertEqual(suspicious, [8])


class TestSepLoss(unittest.TestCase):
    def setUp(self):
        self.table = np.random.default_rng(0).normal(size=(10, 4))
        self.hot = [0, 1]
        self.suspicious = [5, 6, 7]

    def test_identical_rows(self):
        table = np.tile([0.3, -1.0, 2.0], (6, 1))
        loss, _ = sep_loss(table, [0, 1], [3, 4, 5], 0.5)
        self.assertAlmostEqual(loss, 2 * math.log(3))

    def test_empty_suspicious_set(self):
        loss, grads = sep_loss(self.table, self.hot, [], 0.5)
        self.assertEqual(loss, 0.0)
        self.assertFalse(np.any(grads))

    def test_gradient(self):
        _, grads = sep_loss(self.table, self.hot, self.suspicious, 0.5)
        error = finite_diff_check(
            lambda t: sep_loss(t, self.hot, self.suspicious, 0.5)[0],
            self.table, grads)
        self.assertLess(error, 1e-6)

    def test_gradient_only_touches_listed_rows(self):
        _, grads = sep_loss(self.table, self.hot, self.suspicious, 0.5)
        untouched = [2, 3, 4, 8, 9]
        self.assertFalse(np.any(grads[untouched]))

    def test_descent_decreases_loss(self):
        hyper = DefenseHyper(lambda_sep=1.0, lambda_var=0.0, server_lr=0.01)
        table = self.table
        previous = server_loss(table, self.hot, self.suspicious, hyper)[0]
        for _ in range(50):
            _, grads, _, _ = server_loss(
                table, self.hot, self.suspicious, hyper)
            table = table - hyper.server_lr * grads
            loss = server_loss(table, self.hot, self.suspicious, hyper)[0]
            self.assertLessEqual(loss, previous + 1e-12)
            previous = loss


class TestVarLoss(unittest.TestCase):
    def test_identical_rows(self):
        table = np.tile([1.0, 2.0, 3.0], (5, 1))
        loss, grads = var_loss(table, [0, 2], 3)
        self.assertEqual(loss, 0.0)
        self.assertFalse(np.any(grads))

    def test_opposite_pair(self):
        x = np.array([1.0, -2.0, 0.5])
        loss, _ = var_loss(np.stack([x, -x]), [0], 2)
        self.assertAlmostEqual(loss, float(np.mean(x ** 2)))

    def test_gradient(self):
        table = np.random.default_rng(2).normal(size=(12, 4))
        _, grads = var_loss(table, [0, 3], 3)
        error = finite_diff_check(
            lambda t: var_loss(t, [0, 3], 3)[0], table, grads)
        self.assertLess(error, 1e-6)

    def test_neighborhood_includes_item(self):
        table = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [0.0, 1.0]])
        self.assertEqual(sorted(neighborhood(table, 0, 2)), [0, 1])
        self.assertEqual(len(neighborhood(table, 0, 10)), 4)


class TestDefenseStep(unittest.TestCase):
    def setUp(self):
        self.params = make_toy_params(num_items=20, dim=4, seed=3)
        magnitude = np.ones(20)
        magnitude[[0, 1]] = 5.0
        drift = np.zeros(20)
        drift[7] = 0.5
        self.state = PopularityState(20, magnitude, np.full(20, 2), drift,
                                     rounds=1)
        self.hyper = DefenseHyper(
            lambda_sep=1.0, lambda_var=0.1, hot_fraction=0.1,
            sp_fraction=0.05)

    def test_disabled_defense_is_identity(self):
        hyper = DefenseHyper(lambda_sep=0.0, lambda_var=0.0)
        result = defense_step(self.params, self.state, hyper)
        self.assertTrue(result.array_equal(self.params))

    def test_only_item_rows_change(self):
        result = defense_step(self.params, self.state, self.hyper)
        for name in ModelParams.ENCODER_FIELDS:
            np.testing.assert_array_equal(
                getattr(result, name), getattr(self.params, name))
        np.testing.assert_array_equal(
            result.item_embeddings[self.params.mask_id],
            self.params.item_embeddings[self.params.mask_id])
        self.assertFalse(np.array_equal(
            result.item_embeddings, self.params.item_embeddings))

    def test_loss_does_not_increase(self):
        outcome = run_defense(self.params, self.state, self.hyper)
        self.assertEqual(outcome.hot, [0, 1])
        self.assertEqual(outcome.suspicious, [7])

        def total(params):
            table = params.item_embeddings[:20]
            return server_loss(table, outcome.hot, outcome.suspicious,
                               self.hyper)[0]

        self.assertLessEqual(total(outcome.params), total(self.params))

    def test_repeated_steps_are_monotone(self):
        hyper = DefenseHyper(
            lambda_sep=1.0, lambda_var=0.1, hot_fraction=0.1,
            sp_fraction=0.05, server_lr=1.0)
        params = self.params
        previous = None
        for _ in range(10):
            outcome = run_defense(params, self.state, hyper)
            table = outcome.params.item_embeddings[:20]
            loss = server_loss(table, outcome.hot, outcome.suspicious,
                               hyper)[0]
            if previous is not None:
                self.assertLessEqual(loss, previous)
            previous = loss
            params = outcome.params

    def test_no_sets_before_first_round(self):
        result = run_defense(self.params, PopularityState(20), self.hyper)
        self.assertIs(result.params, self.params)
        self.assertEqual(result.backtracks, 0)

    def test_rejects_bad_hyper(self):
        with self.assertRaises(InvalidConfigValueError) as context:
            DefenseHyper(tau_sep=0.0)
        self.assertEqual(context.exception.field, 'defense.tau_sep')
