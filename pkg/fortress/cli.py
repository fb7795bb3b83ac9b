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
"""The ``fortress`` command line

::

    fortress run --config experiment.ini [--seed N] [--out DIR] [--resume CKPT]
    fortress eval --checkpoint CKPT (--data FILE | --config FILE) --k 5,10,20
    fortress gen-data --config experiment.ini [--out FILE]

Exit status is 0 on success, 2 when a run halts on a non-finite model and 1
on any other error.
"""
import argparse
import json
import logging
import os
import sys

from fortress.attacks import resolve_targets
from fortress.checkpoint import load_checkpoint
from fortress.config import parse_config
from fortress.data import leave_one_out_split
from fortress.data import load_interactions
from fortress.data import write_interactions
from fortress.evaluation import evaluate
from fortress.exceptions import FortressError
from fortress.exceptions import HaltError
from fortress.exceptions import ShapeMismatchError
from fortress.runner import load_dataset
from fortress.runner import run_experiment
from fortress.utils import parse_int_list


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HALTED = 2


def _run(args):
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.replace('experiment', base_seed=args.seed)
    if args.out is not None:
        config = config.replace('experiment', output_dir=args.out)
    reports = run_experiment(config, resume_from=args.resume)
    logger.info('Finished %s rounds; outputs in %s', len(reports),
                config.experiment.output_dir)


def _eval(args):
    checkpoint = load_checkpoint(args.checkpoint)
    targets = []
    if args.config is not None:
        config = parse_config(args.config)
        dataset = load_dataset(config.data)
        if config.attack.enabled or config.attack.target_items:
            targets = resolve_targets(config.attack, dataset).target_items
    else:
        dataset = leave_one_out_split(load_interactions(args.data))
    if args.targets:
        targets = parse_int_list(args.targets)
    if dataset.num_items != checkpoint.params.num_items:
        raise ShapeMismatchError(
            'Checkpoint scores %s items but the data has %s' % (
                checkpoint.params.num_items, dataset.num_items))
    result = evaluate(checkpoint.params, dataset, parse_int_list(args.k),
                      targets=targets or None)
    output = {
        'round': checkpoint.round_num,
        'hr': dict((str(k), v) for k, v in result.hr.items()),
        'ndcg': dict((str(k), v) for k, v in result.ndcg.items()),
    }
    if targets:
        output['er_mean'] = dict(
            (str(k), v) for k, v in result.er_mean.items())
    sys.stdout.write(json.dumps(output, sort_keys=True) + '\n')


def _gen_data(args):
    config = parse_config(args.config)
    path = args.out
    if path is None:
        path = os.path.join(config.experiment.output_dir, 'interactions.csv')
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)
    dataset = load_dataset(config.data)
    write_interactions(dataset, path)
    logger.info('Wrote %s users over %s items to %s', dataset.num_users,
                dataset.num_items, path)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='fortress',
        description='Federated sequential recommendation simulator')
    parser.add_argument(
        '--log-level', default='INFO',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    run = commands.add_parser('run', help='Run an experiment')
    run.add_argument('--config', required=True)
    run.add_argument('--seed', type=int, default=None,
                     help='Override experiment.base_seed')
    run.add_argument('--out', default=None,
                     help='Override experiment.output_dir')
    run.add_argument('--resume', default=None,
                     help='Continue from this checkpoint')
    run.set_defaults(handler=_run)

    ev = commands.add_parser('eval', help='Evaluate a checkpoint')
    ev.add_argument('--checkpoint', required=True)
    source = ev.add_mutually_exclusive_group(required=True)
    source.add_argument('--data', help='Interactions CSV')
    source.add_argument('--config',
                        help='Experiment config describing the data')
    ev.add_argument('--k', default='5,10,20')
    ev.add_argument('--targets', default=None,
                    help='Comma-separated target item ids for ER@K')
    ev.set_defaults(handler=_eval)

    gen = commands.add_parser('gen-data',
                              help='Write the configured dataset as CSV')
    gen.add_argument('--config', required=True)
    gen.add_argument('--out', default=None)
    gen.set_defaults(handler=_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        args.handler(args)
    except HaltError as e:
        sys.stderr.write('fortress: halted: %s\n' % e)
        return EXIT_HALTED
    except (FortressError, OSError) as e:
        sys.stderr.write('fortress: error: %s\n' % e)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
