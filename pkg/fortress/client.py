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
import collections
import logging
import math

import numpy as np

from fortress.constants import CONTRASTIVE_VIEWS
from fortress.constants import DEFAULT_CLIP_NORM
from fortress.constants import DEFAULT_NEG_COUNT
from fortress.constants import ITEM_VIEW_JITTER
from fortress.constants import PROVENANCE_BENIGN
from fortress.constants import USER_NEGATIVE_NOISE_SCALE
from fortress.constants import WEIGHT_BY_CHOICES
from fortress.data import AugmentationPolicy
from fortress.data import InteractionSequence
from fortress.data import adjacent_subsequences
from fortress.data import augment_sequence
from fortress.data import derangement
from fortress.encoder import ModelParams
from fortress.encoder import backward
from fortress.encoder import encode
from fortress.encoder import score_items
from fortress.exceptions import DataError
from fortress.exceptions import NonFiniteLossError
from fortress.numerics import clip_by_global_norm
from fortress.numerics import info_nce
from fortress.numerics import softmax_cross_entropy
from fortress.utils import BaseConfig
from fortress.utils import parse_str_list


logger = logging.getLogger(__name__)


LossBreakdown = collections.namedtuple(
    'LossBreakdown', ['rec', 'cl', 'tcr', 'total'])


class ClientHyper(BaseConfig):
    SECTION = 'client'
    FIELD_TYPES = {
        'lambda_cl': float,
        'lambda_tcr': float,
        'tau': float,
        'noise_sigma': float,
        'local_epochs': int,
        'lr': float,
        'tcr_window': int,
        'item_view_step': float,
        'neg_count': int,
        'clip_norm': float,
        'views': parse_str_list,
        'weight_by': str,
    }

    def __init__(self, lambda_cl=0.1, lambda_tcr=0.1, tau=0.5,
                 noise_sigma=0.1, local_epochs=3, lr=0.5, tcr_window=3,
                 item_view_step=0.1, neg_count=DEFAULT_NEG_COUNT,
                 clip_norm=DEFAULT_CLIP_NORM, views=None,
                 weight_by='interactions'):
        """Hyperparameters of benign local training

        :param lambda_cl: Weight of the mean contrastive loss.
        :param lambda_tcr: Weight of the temporal consistency loss.
        :param tau: InfoNCE temperature.
        :param noise_sigma: Standard deviation of user-view noise.
        :param local_epochs: Full-sequence SGD steps per round (E).
        :param lr: SGD learning rate.
        :param tcr_window: Length of the adjacent windows compared by TCR.
        :param item_view_step: Step along the recommendation gradient used
            to perturb item embeddings for the item view.
        :param neg_count: Negatives per sequence-view and user-view loss.
        :param clip_norm: Global-norm clip applied to each step.
        :param views: The contrastive views averaged into the contrastive
            loss, any subset of ``sequence``, ``user`` and ``item``.
        :param weight_by: ``interactions`` weights the update by the number
            of train interactions, ``samples`` by the number of next-item
            training examples.
        """
        self.lambda_cl = lambda_cl
        self.lambda_tcr = lambda_tcr
        self.tau = tau
        self.noise_sigma = noise_sigma
        self.local_epochs = local_epochs
        self.lr = lr
        self.tcr_window = tcr_window
        self.item_view_step = item_view_step
        self.neg_count = neg_count
        self.clip_norm = clip_norm
        if views is None:
            views = list(CONTRASTIVE_VIEWS)
        self.views = list(views)
        self.weight_by = weight_by
        self._validate()

    def _validate(self):
        self._require(self.lambda_cl >= 0, 'lambda_cl', 'must be >= 0')
        self._require(self.lambda_tcr >= 0, 'lambda_tcr', 'must be >= 0')
        self._require(self.tau > 0, 'tau', 'must be > 0')
        self._require(self.noise_sigma >= 0, 'noise_sigma', 'must be >= 0')
        self._require(self.local_epochs >= 1, 'local_epochs', 'must be >= 1')
        self._require(self.lr > 0, 'lr', 'must be > 0')
        self._require(self.tcr_window >= 1, 'tcr_window', 'must be >= 1')
        self._require(self.item_view_step >= 0, 'item_view_step',
                      'must be >= 0')
        self._require(self.neg_count >= 0, 'neg_count', 'must be >= 0')
        self._require(self.clip_norm > 0, 'clip_norm', 'must be > 0')
        self._require(
            all(view in CONTRASTIVE_VIEWS for view in self.views), 'views',
            'must be a subset of %s' % ', '.join(CONTRASTIVE_VIEWS))
        self._require(len(set(self.views)) == len(self.views), 'views',
                      'must not repeat a view')
        self._require(self.weight_by in WEIGHT_BY_CHOICES, 'weight_by',
                      'must be one of %s' % ', '.join(WEIGHT_BY_CHOICES))


class ClientUpdate(object):
    def __init__(self, params, n_u, provenance=PROVENANCE_BENIGN,
                 client_id=None, round_num=None, losses=None,
                 loss_trace=None):
        """The result of one client's round

        :type params: fortress.encoder.ModelParams
        :param params: The client's post-training parameters.

        :type n_u: int
        :param n_u: The aggregation weight.

        :param provenance: ``benign`` or ``malicious``. Read by the harness
            only; the server strips it before aggregating.

        :param losses: The LossBreakdown of the final local step.

        :param loss_trace: Total loss of every local step, in order.
        """
        self.params = params
        self.n_u = n_u
        self.provenance = provenance
        self.client_id = client_id
        self.round_num = round_num
        self.losses = losses
        self.loss_trace = list(loss_trace or [])

    def __repr__(self):
        return 'ClientUpdate(client_id=%s, round_num=%s, n_u=%s)' % (
            self.client_id, self.round_num, self.n_u)


def _train_items(client_data):
    if isinstance(client_data, InteractionSequence):
        if client_data.is_split:
            return client_data.train_items
        return client_data.items
    return [int(i) for i in client_data]


def client_weight(train_items, weight_by='interactions'):
    """n_u for a client holding ``train_items``"""
    if weight_by == 'samples':
        return max(0, len(train_items) - 1)
    return len(train_items)


def rec_loss(params, seq):
    """Mean next-item cross entropy over every prefix of ``seq``

    Position ``t`` predicts ``seq[t]`` from the encoding of ``seq[:t]``. One
    forward pass over ``seq[:-1]`` yields every prefix encoding.

    :raises DataError: If ``seq`` has fewer than two items.
    """
    seq = [int(i) for i in seq]
    if len(seq) < 2:
        raise DataError(
            'Next-item loss needs at least 2 items, got %s' % len(seq))
    _, trace = encode(params, seq[:-1])
    positions = len(seq) - 1
    num_items = params.num_items
    table = params.item_embeddings[:num_items]

    loss = 0.0
    step_grads = np.zeros((positions, params.dim))
    table_grad = np.zeros_like(table)
    for t in range(positions):
        output = trace.outputs[t]
        step_loss, logit_grad = softmax_cross_entropy(
            score_items(params, output), seq[t + 1])
        loss += step_loss
        step_grads[t] = table.T.dot(logit_grad)
        table_grad += np.outer(logit_grad, output)

    grads = backward(params, trace, None, step_grads / positions)
    grads.item_embeddings[:num_items] += table_grad / positions
    return loss / positions, grads


def sequence_view_loss(params, seq, policy, rng, tau,
                       neg_count=DEFAULT_NEG_COUNT):
    """InfoNCE between two augmentations of ``seq``

    Negatives are order-destroyed copies of the user's own sequence, each a
    derangement of ``seq``.
    """
    seq = [int(i) for i in seq]
    first = augment_sequence(seq, policy, rng, params.mask_id)
    second = augment_sequence(seq, policy, rng, params.mask_id)
    negatives = [derangement(seq, rng) for _ in range(neg_count)]

    h_first, trace_first = encode(params, first)
    h_second, trace_second = encode(params, second)
    neg_encodings = [encode(params, negative) for negative in negatives]
    loss, nce_grads = info_nce(
        h_first, h_second, [h for h, _ in neg_encodings], tau)

    grads = backward(params, trace_first, nce_grads.anchor)
    grads = grads.add(backward(params, trace_second, nce_grads.positive))
    for (_, trace), grad in zip(neg_encodings, nce_grads.negatives):
        grads = grads.add(backward(params, trace, grad))
    return loss, grads


def user_view_loss(params, seq, noise_sigma, tau, rng,
                   neg_count=DEFAULT_NEG_COUNT, negative_sigma=None):
    """InfoNCE between two noisy copies of the user's encoding

    Negatives stand in for other users: further copies of the same
    encoding under noise of scale ``negative_sigma``, which defaults to
    ``noise_sigma`` inflated by ``USER_NEGATIVE_NOISE_SCALE``. With the
    same ``rng`` state, a fixed ``negative_sigma`` draws the same negatives
    whatever ``noise_sigma`` is.
    """
    if negative_sigma is None:
        negative_sigma = noise_sigma * USER_NEGATIVE_NOISE_SCALE
    u, trace = encode(params, seq)
    dim = u.shape[0]
    first = u + rng.normal(0.0, noise_sigma, dim)
    second = u + rng.normal(0.0, noise_sigma, dim)
    negatives = [
        u + rng.normal(0.0, negative_sigma, dim)
        for _ in range(neg_count)]
    loss, nce_grads = info_nce(first, second, negatives, tau)
    # Every copy is u plus a constant.
    grad_u = nce_grads.anchor + nce_grads.positive
    for grad in nce_grads.negatives:
        grad_u = grad_u + grad
    return loss, backward(params, trace, grad_u)


def item_view_loss(params, seq, item_view_step, tau, rng, rec_grads=None):
    """Per-item InfoNCE between two gradient-perturbed embeddings

    For each distinct item ``k`` in ``seq`` the two views are
    ``v_k + step * g_k + jitter``, where ``g_k`` is the next-item loss
    gradient for row ``k``. The other items' second views are the
    negatives. ``g_k`` is treated as a constant.

    :param rec_grads: Precomputed next-item gradients. Computed from
        ``seq`` when omitted.
    """
    distinct = list(collections.OrderedDict.fromkeys(int(i) for i in seq))
    if len(distinct) < 2:
        return 0.0, params.zeros_like()
    if rec_grads is None:
        _, rec_grads = rec_loss(params, seq)

    count = len(distinct)
    dim = params.dim
    jitter = ITEM_VIEW_JITTER * item_view_step
    rows = params.item_embeddings[distinct]
    shifted = rows + item_view_step * rec_grads.item_embeddings[distinct]
    first = shifted + rng.normal(0.0, jitter, (count, dim))
    second = shifted + rng.normal(0.0, jitter, (count, dim))

    loss = 0.0
    row_grads = np.zeros((count, dim))
    for k in range(count):
        others = [j for j in range(count) if j != k]
        item_loss, nce_grads = info_nce(
            first[k], second[k], [second[j] for j in others], tau)
        loss += item_loss
        row_grads[k] += nce_grads.anchor + nce_grads.positive
        for j, grad in zip(others, nce_grads.negatives):
            row_grads[j] += grad

    grads = params.zeros_like()
    grads.item_embeddings[distinct] = row_grads / count
    return loss / count, grads


def tcr_loss(params, seq, window):
    """Squared L2 distance between encodings of adjacent tail windows"""
    pair = adjacent_subsequences(seq, window)
    if pair is None:
        return 0.0, params.zeros_like()
    h_prev, trace_prev = encode(params, pair[0])
    h_next, trace_next = encode(params, pair[1])
    diff = h_prev - h_next
    loss = float(np.dot(diff, diff))
    grads = backward(params, trace_prev, 2.0 * diff)
    grads = grads.add(backward(params, trace_next, -2.0 * diff))
    return loss, grads


def contrastive_loss(params, seq, hyper, policy, rng, rec_grads=None):
    """Unweighted mean of the enabled contrastive views

    Views are evaluated in the fixed order sequence, user, item so that the
    generator stream is consumed identically on every run.
    """
    losses = []
    grads = params.zeros_like()
    for view in CONTRASTIVE_VIEWS:
        if view not in hyper.views:
            continue
        if view == 'sequence':
            loss, view_grads = sequence_view_loss(
                params, seq, policy, rng, hyper.tau, hyper.neg_count)
        elif view == 'user':
            loss, view_grads = user_view_loss(
                params, seq, hyper.noise_sigma, hyper.tau, rng,
                hyper.neg_count)
        else:
            loss, view_grads = item_view_loss(
                params, seq, hyper.item_view_step, hyper.tau, rng,
                rec_grads=rec_grads)
        losses.append(loss)
        grads = grads.add(view_grads)
    if not losses:
        return 0.0, grads
    return sum(losses) / len(losses), grads.scale(1.0 / len(losses))


def combined_loss(params, seq, hyper, policy, rng):
    """The client objective ``rec + lambda_cl * cl + lambda_tcr * tcr``

    Components with a zero weight are not evaluated and draw nothing from
    ``rng``.

    :returns: ``(LossBreakdown, grads)``
    """
    rec, grads = rec_loss(params, seq)
    cl = tcr = 0.0
    if hyper.lambda_cl > 0 and hyper.views:
        cl, cl_grads = contrastive_loss(
            params, seq, hyper, policy, rng, rec_grads=grads)
        grads = grads.add(cl_grads.scale(hyper.lambda_cl))
    if hyper.lambda_tcr > 0:
        tcr, tcr_grads = tcr_loss(params, seq, hyper.tcr_window)
        grads = grads.add(tcr_grads.scale(hyper.lambda_tcr))
    total = rec + hyper.lambda_cl * cl + hyper.lambda_tcr * tcr
    return LossBreakdown(rec, cl, tcr, total), grads


def sgd_step(params, grads, lr, clip_norm=None):
    """One plain SGD step after a global-norm clip"""
    clipped, _ = clip_by_global_norm(grads.arrays(), clip_norm)
    return ModelParams(**dict(
        (name, array - lr * grad)
        for (name, array), grad in zip(params.items(), clipped)))


def _check_finite(breakdown):
    for name, value in breakdown._asdict().items():
        if not math.isfinite(value):
            raise NonFiniteLossError('%s loss is %r' % (name, value))


def local_train(global_params, client_data, hyper, rng, policy=None,
                client_id=None, round_num=None):
    """Run E local SGD steps on the client objective

    :param global_params: The current global model; never modified.
    :param client_data: The client's InteractionSequence (its train
        portion is used) or a plain list of train items.
    :param hyper: The ClientHyper.
    :param rng: The client's private generator for this round.
    :param policy: The AugmentationPolicy for the sequence view.

    :returns: A ClientUpdate, or None when the client has fewer than two
        train items or its loss stopped being finite.
    """
    seq = _train_items(client_data)
    if len(seq) < 2:
        logger.warning(
            'Skipping client %s in round %s: %s train items', client_id,
            round_num, len(seq))
        return None
    if policy is None:
        policy = AugmentationPolicy()

    params = global_params.copy()
    loss_trace = []
    breakdown = None
    for epoch in range(hyper.local_epochs):
        try:
            breakdown, grads = combined_loss(params, seq, hyper, policy, rng)
            _check_finite(breakdown)
        except NonFiniteLossError as e:
            logger.warning(
                'Aborting client %s in round %s at epoch %s: %s',
                client_id, round_num, epoch, e)
            return None
        loss_trace.append(breakdown.total)
        params = sgd_step(params, grads, hyper.lr, hyper.clip_norm)
    if not params.is_finite():
        logger.warning('Aborting client %s in round %s: non-finite params',
                       client_id, round_num)
        return None
    return ClientUpdate(
        params=params, n_u=client_weight(seq, hyper.weight_by),
        provenance=PROVENANCE_BENIGN, client_id=client_id,
        round_num=round_num, losses=breakdown, loss_trace=loss_trace)
