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
"""Deterministic simulation of federated sequential recommendation.

This package simulates a federation of clients that each hold one user's
interaction history and train a shared next-item model. It handles several
things for the user:

* Local training with a recommendation loss plus sequence, user and item
  contrastive views and a temporal consistency penalty
* Weighted FedAvg aggregation at a round barrier, with clients of a round
  trained in parallel
* A popularity-aware server defense on the item-embedding table
* Promotion and camouflage poisoning attacks from malicious clients
* HR@K, NDCG@K and exposure-ratio (ER@K) evaluation
* Checkpointing and resume, with byte-identical metrics for a fixed seed


.. _ref_fortress_usage:

Usage
=====

The simplest way to use this package is through an experiment config:

.. code-block:: python

    from fortress.config import parse_config
    from fortress.runner import run_experiment

    config = parse_config('experiment.ini')
    reports = run_experiment(config)
    print(reports[-1].hr)

The same experiment can be run from the shell::

    fortress run --config experiment.ini --out results/

Individual building blocks can also be driven directly:

.. code-block:: python

    from fortress.data import synth_generate, leave_one_out_split
    from fortress.encoder import init_params
    from fortress.evaluation import evaluate

    dataset = leave_one_out_split(
        synth_generate(200, 200, (8, 20), transition_skew=0.8, seed=1))
    params = init_params(dataset.num_items, 32, seed=1)
    print(evaluate(params, dataset, ks=[10]).hr)

"""
import logging


__author__ = 'The FORTRESS Simulator Authors'
__version__ = '0.1.0'


class NullHandler(logging.Handler):
    def emit(self, record):
        pass


logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())
