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
"""Malicious clients: promotion and camouflage poisoning

Both attacks are white-box: they start from the global model they were
sent, like a benign client, but hold no interaction data. Their only prior
knowledge is a small set of popular item ids. Returned updates have the
same type as benign ones.
"""
import logging
import math

import numpy as np

from fortress.client import ClientHyper
from fortress.client import ClientUpdate
from fortress.client import sgd_step
from fortress.constants import ATTACK_KINDS
from fortress.constants import PROVENANCE_MALICIOUS
from fortress.data import item_counts
from fortress.encoder import backward
from fortress.encoder import encode
from fortress.encoder import score_items
from fortress.exceptions import AttackError
from fortress.exceptions import InvalidConfigValueError
from fortress.numerics import softmax_cross_entropy
from fortress.utils import BaseConfig
from fortress.utils import parse_bool
from fortress.utils import parse_int_list


logger = logging.getLogger(__name__)

# Weight of the alternative-item term in the promotion objective.
ALT_ITEM_WEIGHT = 0.5
# Weight of the hard-probe score deficit in the camouflage objective.
CAMOUFLAGE_SCORE_WEIGHT = 0.1
# Probes drawn per kept hard probe.
PROBE_OVERSAMPLING = 4


class AttackSpec(BaseConfig):
    SECTION = 'attack'
    FIELD_TYPES = {
        'kind': str,
        'target_items': parse_int_list,
        'malicious_fraction': float,
        'pseudo_users_per_client': int,
        'pseudo_seq_len': int,
        'alt_item_count': int,
        'camo_steps': int,
        'camo_lr': float,
        'norm_match': parse_bool,
        'start_round': int,
        'target_count': int,
        'popular_fraction': float,
    }

    def __init__(self, kind='none', target_items=None,
                 malicious_fraction=0.05, pseudo_users_per_client=4,
                 pseudo_seq_len=10, alt_item_count=2, camo_steps=10,
                 camo_lr=0.1, norm_match=True, start_round=1,
                 target_count=5, popular_fraction=0.01):
        """The threat model of an experiment

        :param kind: ``none``, ``promotion`` or ``camouflage``.
        :param target_items: Item ids to promote. When empty, the
            ``target_count`` rarest items are selected.
        :param malicious_fraction: Malicious clients as a fraction of the
            benign population, in ``[0, 1)``.
        :param pseudo_users_per_client: Synthetic users (promotion) or hard
            probes (camouflage) per malicious client.
        :param pseudo_seq_len: Length of each synthetic sequence.
        :param alt_item_count: Alternative items appended to each
            synthetic sequence as extra positives.
        :param camo_steps: Gradient steps of the camouflage attack.
        :param camo_lr: Step size of the camouflage attack.
        :param norm_match: Rescale the update delta to the median benign
            delta norm of the previous round.
        :param start_round: First round in which malicious clients join.
        :param target_count: Targets auto-selected when ``target_items``
            is empty.
        :param popular_fraction: Fraction of items, by true interaction
            count, known to attackers as popular.
        """
        self.kind = kind
        self.target_items = list(target_items or [])
        self.malicious_fraction = malicious_fraction
        self.pseudo_users_per_client = pseudo_users_per_client
        self.pseudo_seq_len = pseudo_seq_len
        self.alt_item_count = alt_item_count
        self.camo_steps = camo_steps
        self.camo_lr = camo_lr
        self.norm_match = norm_match
        self.start_round = start_round
        self.target_count = target_count
        self.popular_fraction = popular_fraction
        self._validate()

    def _validate(self):
        self._require(self.kind in ATTACK_KINDS, 'kind',
                      'must be one of %s' % ', '.join(ATTACK_KINDS))
        self._require(all(i >= 0 for i in self.target_items), 'target_items',
                      'must be valid item ids')
        self._require(0.0 <= self.malicious_fraction < 1.0,
                      'malicious_fraction', 'must be in [0, 1)')
        self._require(self.pseudo_users_per_client >= 1,
                      'pseudo_users_per_client', 'must be >= 1')
        self._require(self.pseudo_seq_len >= 2, 'pseudo_seq_len',
                      'must be >= 2')
        self._require(self.alt_item_count >= 0, 'alt_item_count',
                      'must be >= 0')
        self._require(self.camo_steps >= 1, 'camo_steps', 'must be >= 1')
        self._require(self.camo_lr > 0, 'camo_lr', 'must be > 0')
        self._require(self.start_round >= 1, 'start_round', 'must be >= 1')
        self._require(self.target_count >= 0, 'target_count', 'must be >= 0')
        self._require(0.0 < self.popular_fraction <= 1.0,
                      'popular_fraction', 'must be in (0, 1]')

    @property
    def enabled(self):
        return self.kind != 'none' and self.malicious_fraction > 0

    def with_targets(self, target_items):
        fields = self.as_dict()
        fields['target_items'] = list(target_items)
        return AttackSpec(**fields)


def malicious_client_ids(num_users, fraction):
    """Ids ``N .. N + m - 1`` for ``m = round(fraction * N)`` attackers

    At least one attacker exists whenever ``fraction > 0``.
    """
    if fraction <= 0:
        return []
    count = max(1, int(round(fraction * num_users)))
    return list(range(num_users, num_users + count))


def select_targets(dataset, count):
    """The ``count`` rarest items by interaction count, lowest id first"""
    counts = item_counts(dataset)
    order = np.lexsort((np.arange(dataset.num_items), counts))
    return sorted(int(i) for i in order[:count])


def resolve_targets(spec, dataset):
    """Fill in and validate the target items against ``dataset``"""
    targets = spec.target_items or select_targets(dataset, spec.target_count)
    for item in targets:
        if not 0 <= item < dataset.num_items:
            raise InvalidConfigValueError(
                'attack.target_items',
                'item %s outside [0, %s)' % (item, dataset.num_items))
    return spec.with_targets(targets)


def match_norm(global_params, params, norm_reference):
    """Rescale ``params - global_params`` to ``norm_reference``

    Returns ``params`` unchanged when there is no reference yet or the
    delta is zero.
    """
    if norm_reference is None or norm_reference <= 0:
        return params
    delta = params.sub(global_params)
    delta_norm = delta.norm()
    if delta_norm == 0.0:
        return params
    return global_params.add(delta.scale(norm_reference / delta_norm))


def _pseudo_sequence(spec, popular_items, num_items, rng):
    body = []
    for _ in range(spec.pseudo_seq_len):
        if rng.random() < 0.5:
            body.append(int(popular_items[rng.integers(len(popular_items))]))
        else:
            body.append(int(rng.integers(num_items)))
    alternatives = [int(i) for i in rng.integers(
        num_items, size=spec.alt_item_count)]
    return body, alternatives


def promotion_loss(params, body, alternatives, target):
    """Target cross entropy at every prefix of ``body`` plus the weighted
    next-item loss of the appended alternative items
    """
    prefix = body + alternatives[:-1] if alternatives else body
    _, trace = encode(params, prefix)
    num_items = params.num_items
    table = params.item_embeddings[:num_items]
    step_grads = np.zeros((len(prefix), params.dim))
    table_grad = np.zeros_like(table)

    loss = 0.0
    labelled = [(t, target, 1.0 / len(body)) for t in range(len(body))]
    for j, item in enumerate(alternatives):
        labelled.append((len(body) - 1 + j, item,
                         ALT_ITEM_WEIGHT / len(alternatives)))
    for t, label, weight in labelled:
        output = trace.outputs[t]
        step_loss, logit_grad = softmax_cross_entropy(
            score_items(params, output), label)
        loss += weight * step_loss
        step_grads[t] += weight * table.T.dot(logit_grad)
        table_grad += weight * np.outer(logit_grad, output)

    grads = backward(params, trace, None, step_grads)
    grads.item_embeddings[:num_items] += table_grad
    return loss, grads


def promotion_update(global_params, spec, popular_items, rng, hyper=None,
                     norm_reference=None, client_id=None, round_num=None):
    """Train on synthetic users whose every prefix is labelled a target

    :param popular_items: Item ids the attacker believes are popular; the
        synthetic sequences mix them with uniform draws to look plausible.
    :param hyper: ClientHyper giving the local epochs, step size and clip.
    :param norm_reference: Median benign delta norm of the previous round,
        or None to skip norm matching.
    """
    if not spec.target_items:
        raise AttackError('Promotion attack has no target items')
    if not len(popular_items):
        popular_items = list(range(global_params.num_items))
    hyper = hyper or ClientHyper()
    num_items = global_params.num_items
    pseudo_users = []
    for index in range(spec.pseudo_users_per_client):
        body, alternatives = _pseudo_sequence(
            spec, popular_items, num_items, rng)
        target = spec.target_items[index % len(spec.target_items)]
        pseudo_users.append((body, alternatives, target))

    params = global_params.copy()
    loss = None
    for _ in range(hyper.local_epochs):
        total = 0.0
        grads = params.zeros_like()
        for body, alternatives, target in pseudo_users:
            user_loss, user_grads = promotion_loss(
                params, body, alternatives, target)
            total += user_loss
            grads = grads.add(user_grads)
        count = len(pseudo_users)
        loss = total / count
        params = sgd_step(params, grads.scale(1.0 / count), hyper.lr,
                          hyper.clip_norm)

    if spec.norm_match:
        params = match_norm(global_params, params, norm_reference)
    logger.debug('Promotion client %s round %s: loss %.6f', client_id,
                 round_num, loss)
    n_u = spec.pseudo_users_per_client * (
        spec.pseudo_seq_len + spec.alt_item_count)
    return ClientUpdate(
        params=params, n_u=n_u, provenance=PROVENANCE_MALICIOUS,
        client_id=client_id, round_num=round_num)


def mine_hard_probes(params, target, count, rng):
    """Gaussian hidden-state probes under which ``target`` ranks lowest"""
    dim = params.dim
    probes = rng.normal(0.0, 1.0 / math.sqrt(dim),
                        (count * PROBE_OVERSAMPLING, dim))
    scores = probes.dot(params.item_embeddings[:params.num_items].T)
    target_scores = scores[:, target][:, np.newaxis]
    ranks = np.sum(scores > target_scores, axis=1)
    # Highest rank number first; stable so earlier probes win ties.
    hardest = np.argsort(-ranks, kind='mergesort')[:count]
    return probes[hardest]


def camouflage_loss(embeddings, target, popular_items, probes):
    """Distance of the target row to the popular centroid plus the mean
    hinge of the popular-minus-target score under the hard probes

    :returns: ``(loss, d loss / d embeddings[target])``
    """
    centroid = embeddings[popular_items].mean(axis=0)
    row = embeddings[target]
    diff = row - centroid
    loss = float(np.dot(diff, diff))
    grad = 2.0 * diff
    popular_scores = probes.dot(embeddings[popular_items].T).mean(axis=1)
    deficits = popular_scores - probes.dot(row)
    active = deficits > 0
    loss += CAMOUFLAGE_SCORE_WEIGHT * float(
        np.sum(deficits[active])) / len(probes)
    grad = grad - CAMOUFLAGE_SCORE_WEIGHT * probes[active].sum(
        axis=0) / len(probes)
    return loss, grad


def camouflage_update(global_params, spec, popular_items, rng, hyper=None,
                      norm_reference=None, client_id=None, round_num=None):
    """Drag each target's embedding into the popular cluster

    Only item-embedding rows of the targets change; encoder weights are
    returned as sent.

    :raises AttackError: If ``popular_items`` is empty.
    """
    popular_items = [int(i) for i in popular_items]
    if not popular_items:
        raise AttackError(
            'Camouflage attack requires a non-empty popular item set')
    if not spec.target_items:
        raise AttackError('Camouflage attack has no target items')
    params = global_params.copy()
    embeddings = params.item_embeddings
    for target in spec.target_items:
        if target in popular_items:
            continue
        probes = mine_hard_probes(
            params, target, spec.pseudo_users_per_client, rng)
        for _ in range(spec.camo_steps):
            _, grad = camouflage_loss(
                embeddings, target, popular_items, probes)
            embeddings[target] -= spec.camo_lr * grad

    if spec.norm_match:
        params = match_norm(global_params, params, norm_reference)
    n_u = spec.pseudo_users_per_client * spec.pseudo_seq_len
    return ClientUpdate(
        params=params, n_u=n_u, provenance=PROVENANCE_MALICIOUS,
        client_id=client_id, round_num=round_num)


def attack_update(global_params, spec, popular_items, rng, **kwargs):
    if spec.kind == 'promotion':
        return promotion_update(
            global_params, spec, popular_items, rng, **kwargs)
    if spec.kind == 'camouflage':
        return camouflage_update(
            global_params, spec, popular_items, rng, **kwargs)
    raise AttackError('No attack update for kind %r' % spec.kind)
