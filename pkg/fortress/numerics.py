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
"""Dense similarity and loss primitives with hand-derived gradients

Vectors are 1-D ``numpy.float64`` arrays and matrices are 2-D row-major
``numpy.float64`` arrays. Every function here is pure apart from the
degenerate-input counter, which only records how often a zero-norm vector
was handed to :func:`cosine_sim`.
"""
import collections
import logging
import threading

import numpy as np

from fortress.exceptions import InvalidHyperparameterError


logger = logging.getLogger(__name__)


InfoNCEGrads = collections.namedtuple(
    'InfoNCEGrads', ['anchor', 'positive', 'negatives'])


class DegenerateInputCounter(object):
    """Thread-safe count of zero-norm inputs seen by cosine_sim"""
    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self):
        with self._lock:
            return self._count

    def increment(self):
        with self._lock:
            self._count += 1

    def reset(self):
        with self._lock:
            self._count = 0


degenerate_inputs = DegenerateInputCounter()


def as_vec(data):
    vec = np.asarray(data, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] == 0:
        raise ValueError('Expected a non-empty 1-D vector, got shape %s' % (
            vec.shape,))
    return vec


def l2_norm(vec):
    return float(np.sqrt(np.dot(vec, vec)))


def cosine_sim(a, b):
    """Cosine similarity clamped to [-1, 1]

    A zero-norm input yields 0.0 and bumps ``degenerate_inputs``.
    """
    return _cosine_sim_and_grads(a, b, want_grads=False)[0]


def cosine_sim_grads(a, b):
    """Returns ``(sim, d sim / d a, d sim / d b)``"""
    return _cosine_sim_and_grads(a, b, want_grads=True)


def _cosine_sim_and_grads(a, b, want_grads):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError('Dimension mismatch: %s vs %s' % (a.shape, b.shape))
    norm_a = l2_norm(a)
    norm_b = l2_norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        degenerate_inputs.increment()
        logger.debug('Zero-norm input to cosine_sim, returning 0.0')
        if want_grads:
            return 0.0, np.zeros_like(a), np.zeros_like(b)
        return 0.0, None, None
    raw = float(np.dot(a, b)) / (norm_a * norm_b)
    sim = min(1.0, max(-1.0, raw))
    if not want_grads:
        return sim, None, None
    grad_a = b / (norm_a * norm_b) - raw * a / (norm_a * norm_a)
    grad_b = a / (norm_a * norm_b) - raw * b / (norm_b * norm_b)
    return sim, grad_a, grad_b


def logsumexp(values):
    values = np.asarray(values, dtype=np.float64)
    peak = np.max(values)
    return float(peak + np.log(np.sum(np.exp(values - peak))))


def softmax(values):
    values = np.asarray(values, dtype=np.float64)
    shifted = np.exp(values - np.max(values))
    return shifted / np.sum(shifted)


def info_nce(anchor, positive, negatives, tau):
    """InfoNCE over cosine similarities

    The denominator always includes the positive pair, so the loss is
    non-negative and equals exactly 0.0 when there are no negatives.

    :param anchor: The anchor vector.
    :param positive: The positive vector paired with the anchor.
    :param negatives: A (possibly empty) list of negative vectors.
    :param tau: The temperature, must be positive.

    :returns: ``(loss, InfoNCEGrads)`` where the gradients are with respect
        to the anchor, the positive and each negative.
    """
    if not tau > 0:
        raise InvalidHyperparameterError('tau must be > 0, got %r' % tau)
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    sim_pos, d_anchor_pos, d_positive = cosine_sim_grads(anchor, positive)
    logits = [sim_pos / tau]
    neg_parts = []
    for negative in negatives:
        sim_neg, d_anchor_neg, d_negative = cosine_sim_grads(anchor, negative)
        logits.append(sim_neg / tau)
        neg_parts.append((d_anchor_neg, d_negative))

    loss = logsumexp(logits) - logits[0]
    probs = softmax(logits)

    grad_anchor = ((probs[0] - 1.0) / tau) * d_anchor_pos
    grad_positive = ((probs[0] - 1.0) / tau) * d_positive
    grad_negatives = []
    for prob, (d_anchor_neg, d_negative) in zip(probs[1:], neg_parts):
        grad_anchor = grad_anchor + (prob / tau) * d_anchor_neg
        grad_negatives.append((prob / tau) * d_negative)
    return loss, InfoNCEGrads(grad_anchor, grad_positive, grad_negatives)


def softmax_cross_entropy(logits, target_index):
    """Numerically stable cross entropy of one target under softmax(logits)

    :returns: ``(loss, grad)`` with ``grad = softmax(logits) - one_hot``.
    :raises IndexError: If ``target_index`` is outside ``[0, len(logits))``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target_index < logits.shape[0]:
        raise IndexError(
            'Target index %s out of range for %s logits' % (
                target_index, logits.shape[0]))
    loss = logsumexp(logits) - float(logits[target_index])
    grad = softmax(logits)
    grad[target_index] -= 1.0
    return loss, grad


def clip_by_global_norm(arrays, max_norm):
    """Scale a list of arrays so their joint L2 norm is at most max_norm

    :returns: ``(clipped_arrays, original_norm)``
    """
    total = float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))
    if max_norm is None or total <= max_norm or total == 0.0:
        return list(arrays), total
    factor = max_norm / total
    return [a * factor for a in arrays], total


def _flatten(obj):
    if hasattr(obj, 'to_vector'):
        return obj.to_vector()
    return np.array(obj, dtype=np.float64).reshape(-1)


def _unflatten(template, vector):
    if hasattr(template, 'from_vector'):
        return template.from_vector(vector)
    template = np.asarray(template, dtype=np.float64)
    if template.ndim == 0:
        return float(vector[0])
    return vector.reshape(template.shape)


def finite_diff_check(f, params, analytic_grad, eps=1e-5, max_coords=None,
                      rng=None):
    """Compare an analytic gradient against central differences

    :param f: A scalar-valued function of ``params``.
    :param params: The point at which to check. Either a ``ModelParams``
        or anything numpy can turn into an array.
    :param analytic_grad: The gradient to check, same structure as params.
    :param eps: Finite-difference step, in ``[1e-7, 1e-3]``.
    :param max_coords: If given, check only a random subset of this many
        coordinates.
    :param rng: Generator used to pick the subset.

    :returns: The max over checked coordinates of
        ``|fd - analytic| / max(1, |fd|, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InvalidHyperparameterError(
            'eps must be in [1e-7, 1e-3], got %r' % eps)
    base = _flatten(params)
    analytic = _flatten(analytic_grad)
    if base.shape != analytic.shape:
        raise ValueError('Gradient has %s coordinates, params have %s' % (
            analytic.shape[0], base.shape[0]))
    coords = np.arange(base.shape[0])
    if max_coords is not None and max_coords < base.shape[0]:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = np.sort(rng.choice(base.shape[0], max_coords, replace=False))

    worst = 0.0
    for index in coords:
        plus = base.copy()
        plus[index] += eps
        minus = base.copy()
        minus[index] -= eps
        fd = (f(_unflatten(params, plus)) -
              f(_unflatten(params, minus))) / (2.0 * eps)
        an = float(analytic[index])
        err = abs(fd - an) / max(1.0, abs(fd), abs(an))
        worst = max(worst, err)
    return worst
