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
import os

from tests import FileCreator
from tests import make_config
from tests import mock
from tests import unittest
from fortress.cli import EXIT_ERROR
from fortress.cli import EXIT_HALTED
from fortress.cli import EXIT_OK
from fortress.cli import main
from fortress.config import format_config
from fortress.data import load_interactions


class BaseCLITest(unittest.TestCase):
    def setUp(self):
        self.files = FileCreator()
        self.output_dir = self.files.full_path('out')
        self.config_path = self.write_config(make_config(self.output_dir))

    def tearDown(self):
        self.files.remove_all()

    def write_config(self, config, name='experiment.ini'):
        return self.files.create_file(name, format_config(config))

    def run_main(self, argv):
        with mock.patch('sys.stdout', new_callable=io.StringIO) as stdout:
            with mock.patch('sys.stderr', new_callable=io.StringIO) as stderr:
                exit_code = main(['--log-level', 'ERROR'] + argv)
        self.stdout = stdout.getvalue()
        self.stderr = stderr.getvalue()
        return exit_code


class TestRunCommand(BaseCLITest):
    def test_run(self):
        self.assertEqual(self.run_main(['run', '--config', self.config_path]),
                         EXIT_OK)
        for name in ('config.echo', 'metrics.jsonl',
                     os.path.join('checkpoints', 'round_00002.npz')):
            self.assertTrue(
                os.path.exists(os.path.join(self.output_dir, name)), name)

    def test_overrides(self):
        other_dir = self.files.full_path('other')
        exit_code = self.run_main(['run', '--config', self.config_path,
                                   '--seed', '99', '--out', other_dir])
        self.assertEqual(exit_code, EXIT_OK)
        with open(os.path.join(other_dir, 'config.echo')) as f:
            echo = f.read()
        self.assertIn('base_seed = 99', echo)
        self.assertFalse(os.path.exists(self.output_dir))

    def test_resume(self):
        self.run_main(['run', '--config', self.config_path])
        longer = self.write_config(make_config(self.output_dir, rounds=3),
                                   name='longer.ini')
        checkpoint = os.path.join(self.output_dir, 'checkpoints',
                                  'round_00002.npz')
        exit_code = self.run_main(['run', '--config', longer,
                                   '--resume', checkpoint])
        self.assertEqual(exit_code, EXIT_OK)
        with open(os.path.join(self.output_dir, 'metrics.jsonl')) as f:
            rounds = [json.loads(line)['round'] for line in f]
        self.assertEqual(rounds, [1, 2, 3])

    def test_invalid_config(self):
        bad = self.files.create_file('bad.ini', '[client]\nlambda_cl = -1\n')
        self.assertEqual(self.run_main(['run', '--config', bad]), EXIT_ERROR)
        self.assertIn('client.lambda_cl', self.stderr)

    def test_missing_config(self):
        missing = self.files.full_path('missing.ini')
        self.assertEqual(self.run_main(['run', '--config', missing]),
                         EXIT_ERROR)

    def test_malformed_csv(self):
        data_path = self.files.create_file(
            'interactions.csv',
            'user_id,item_id,timestamp\n1,1,1\n1,2,2,9\n1,3,3\n')
        config = make_config(self.output_dir,
                             data={'source': 'csv', 'path': data_path})
        exit_code = self.run_main(
            ['run', '--config', self.write_config(config, 'csv.ini')])
        self.assertEqual(exit_code, EXIT_ERROR)
        self.assertIn('Line 3', self.stderr)

    def test_halt(self):
        def poisoned(updates, server_config, global_params):
            return global_params.scale(float('inf'))

        with mock.patch('fortress.runner.aggregate_updates',
                        side_effect=poisoned):
            exit_code = self.run_main(['run', '--config', self.config_path])
        self.assertEqual(exit_code, EXIT_HALTED)
        self.assertTrue(os.path.exists(
            os.path.join(self.output_dir, 'halt_round_1.json')))


class TestEvalCommand(BaseCLITest):
    def setUp(self):
        super(TestEvalCommand, self).setUp()
        self.run_main(['run', '--config', self.config_path])
        self.checkpoint = os.path.join(self.output_dir, 'checkpoints',
                                       'round_00002.npz')

    def test_eval_with_config(self):
        exit_code = self.run_main(['eval', '--checkpoint', self.checkpoint,
                                   '--config', self.config_path,
                                   '--k', '5,10'])
        self.assertEqual(exit_code, EXIT_OK)
        output = json.loads(self.stdout)
        self.assertEqual(output['round'], 2)
        self.assertEqual(sorted(output['hr']), ['10', '5'])
        self.assertNotIn('er_mean', output)

    def test_eval_matches_run_metrics(self):
        self.run_main(['eval', '--checkpoint', self.checkpoint,
                       '--config', self.config_path, '--k', '5,10'])
        with open(os.path.join(self.output_dir, 'metrics.jsonl')) as f:
            last = [json.loads(line) for line in f][-1]
        self.assertEqual(json.loads(self.stdout)['hr'], last['hr'])

    def test_eval_with_targets(self):
        self.run_main(['eval', '--checkpoint', self.checkpoint,
                       '--config', self.config_path, '--k', '5',
                       '--targets', '1,2'])
        self.assertIn('5', json.loads(self.stdout)['er_mean'])

    def test_corrupted_checkpoint(self):
        with open(self.checkpoint, 'wb') as f:
            f.write(b'not a checkpoint')
        exit_code = self.run_main(['eval', '--checkpoint', self.checkpoint,
                                   '--config', self.config_path])
        self.assertEqual(exit_code, EXIT_ERROR)

    def test_item_count_mismatch(self):
        other = self.write_config(
            make_config(self.output_dir, num_items=40), name='other.ini')
        exit_code = self.run_main(['eval', '--checkpoint', self.checkpoint,
                                   '--config', other])
        self.assertEqual(exit_code, EXIT_ERROR)


class TestGenDataCommand(BaseCLITest):
    def test_writes_csv(self):
        path = self.files.full_path('data/interactions.csv')
        exit_code = self.run_main(['gen-data', '--config', self.config_path,
                                   '--out', path])
        self.assertEqual(exit_code, EXIT_OK)
        dataset = load_interactions(path)
        self.assertEqual(dataset.num_users, 20)
        with open(path) as f:
            self.assertEqual(f.readline().strip(), 'user_id,item_id,timestamp')

    def test_default_location(self):
        self.run_main(['gen-data', '--config', self.config_path])
        self.assertTrue(os.path.exists(
            os.path.join(self.output_dir, 'interactions.csv')))
