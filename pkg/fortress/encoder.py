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
"""The sequential model: item embeddings, a gated recurrent layer, scoring

Forward and backward passes are written out by hand. ``encode`` keeps a
trace of every step so that one pass yields the encoding of every prefix
of the input, which is what the next-item loss consumes.
"""
import logging
import math

import numpy as np

from fortress.exceptions import ShapeMismatchError
from fortress.utils import derive_rng


logger = logging.getLogger(__name__)


class ModelParams(object):
    """A value-semantic bundle of every trainable array

    Shapes for ``M`` items and dimension ``d``:

    * ``item_embeddings``: ``(M + 1, d)``; row ``M`` is the mask token
    * ``w_z``, ``w_r``, ``w_h``: ``(d, 2d)`` update, reset and candidate
      weights acting on ``[x; h]``
    * ``b_z``, ``b_r``, ``b_h``: ``(d,)``
    * ``out_proj``: ``(d, d)``
    """
    FIELDS = ('item_embeddings', 'w_z', 'w_r', 'w_h',
              'b_z', 'b_r', 'b_h', 'out_proj')
    ENCODER_FIELDS = FIELDS[1:]

    def __init__(self, item_embeddings, w_z, w_r, w_h, b_z, b_r, b_h,
                 out_proj):
        self.item_embeddings = np.asarray(item_embeddings, dtype=np.float64)
        self.w_z = np.asarray(w_z, dtype=np.float64)
        self.w_r = np.asarray(w_r, dtype=np.float64)
        self.w_h = np.asarray(w_h, dtype=np.float64)
        self.b_z = np.asarray(b_z, dtype=np.float64)
        self.b_r = np.asarray(b_r, dtype=np.float64)
        self.b_h = np.asarray(b_h, dtype=np.float64)
        self.out_proj = np.asarray(out_proj, dtype=np.float64)
        self._check_shapes()

    def _check_shapes(self):
        rows, dim = self.item_embeddings.shape
        expected = {
            'w_z': (dim, 2 * dim), 'w_r': (dim, 2 * dim),
            'w_h': (dim, 2 * dim), 'b_z': (dim,), 'b_r': (dim,),
            'b_h': (dim,), 'out_proj': (dim, dim),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(
                    '%s has shape %s, expected %s' % (
                        name, getattr(self, name).shape, shape))

    def __repr__(self):
        return 'ModelParams(num_items=%s, dim=%s)' % (
            self.num_items, self.dim)

    @property
    def num_items(self):
        """M, the number of real items (the mask row is not counted)"""
        return self.item_embeddings.shape[0] - 1

    @property
    def dim(self):
        return self.item_embeddings.shape[1]

    @property
    def mask_id(self):
        return self.num_items

    @property
    def shapes(self):
        return dict((name, getattr(self, name).shape) for name in self.FIELDS)

    def arrays(self):
        return [getattr(self, name) for name in self.FIELDS]

    def items(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def _check_compatible(self, other):
        if self.shapes != other.shapes:
            raise ShapeMismatchError(
                'Parameter shapes differ: %s vs %s' % (
                    self.shapes, other.shapes))

    def _combine(self, other, op):
        self._check_compatible(other)
        return ModelParams(**dict(
            (name, op(getattr(self, name), getattr(other, name)))
            for name in self.FIELDS))

    def add(self, other):
        return self._combine(other, np.add)

    def sub(self, other):
        return self._combine(other, np.subtract)

    def scale(self, factor):
        return ModelParams(**dict(
            (name, getattr(self, name) * factor) for name in self.FIELDS))

    def zeros_like(self):
        return ModelParams(**dict(
            (name, np.zeros_like(getattr(self, name)))
            for name in self.FIELDS))

    def copy(self):
        return ModelParams(**dict(
            (name, getattr(self, name).copy()) for name in self.FIELDS))

    def norm(self, fields=None):
        fields = fields or self.FIELDS
        return float(np.sqrt(sum(
            float(np.sum(getattr(self, name) ** 2)) for name in fields)))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_vector(self):
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def from_vector(self, vector):
        """Build params shaped like ``self`` from a flat vector"""
        vector = np.asarray(vector, dtype=np.float64)
        total = sum(a.size for a in self.arrays())
        if vector.shape != (total,):
            raise ShapeMismatchError(
                'Expected a vector of %s values, got shape %s' % (
                    total, vector.shape))
        fields = {}
        offset = 0
        for name in self.FIELDS:
            array = getattr(self, name)
            fields[name] = vector[offset:offset + array.size].reshape(
                array.shape).copy()
            offset += array.size
        return ModelParams(**fields)

    def allclose(self, other, atol=1e-12):
        if self.shapes != other.shapes:
            return False
        return all(np.allclose(a, b, rtol=0.0, atol=atol)
                   for a, b in zip(self.arrays(), other.arrays()))

    def array_equal(self, other):
        if self.shapes != other.shapes:
            return False
        return all(np.array_equal(a, b)
                   for a, b in zip(self.arrays(), other.arrays()))


class EncodeTrace(object):
    """Per-step activations cached by a forward pass

    ``hidden[0]`` is the zero initial state, so ``hidden`` has one more
    entry than the input; every other list has one entry per input item.
    """
    def __init__(self, items, inputs, hidden, update_gates, reset_gates,
                 candidates, outputs):
        self.items = items
        self.inputs = inputs
        self.hidden = hidden
        self.update_gates = update_gates
        self.reset_gates = reset_gates
        self.candidates = candidates
        self.outputs = outputs

    def __len__(self):
        return len(self.items)

    @property
    def dim(self):
        return self.hidden[0].shape[0]

    @property
    def final(self):
        return self.outputs[-1]


def _sigmoid(values):
    return 0.5 * (1.0 + np.tanh(0.5 * values))


class BaseEncoder(object):
    """Interface shared by sequence encoders

    Clients, attacks and evaluation only go through these four methods, so
    another encoder can be swapped in without touching them.
    """
    def init_params(self, num_items, dim, seed):
        raise NotImplementedError('init_params()')

    def encode(self, params, seq):
        raise NotImplementedError('encode()')

    def backward(self, params, trace, upstream_grad, step_grads=None):
        raise NotImplementedError('backward()')

    def score_items(self, params, h):
        """Logits over the real items, ``E[:M] @ h``"""
        return params.item_embeddings[:params.num_items].dot(h)

    def score_items_backward(self, params, h, logit_grad):
        """Gradients of the logits with respect to ``h`` and the table

        :returns: ``(d h, d item_embeddings[:M])``
        """
        table = params.item_embeddings[:params.num_items]
        return table.T.dot(logit_grad), np.outer(logit_grad, h)


class GRUEncoder(BaseEncoder):
    """Single-layer gated recurrent encoder

    For input embedding ``x`` and previous state ``h``::

        z  = sigmoid(W_z [x; h] + b_z)
        r  = sigmoid(W_r [x; h] + b_r)
        n  = tanh(W_h [x; r * h] + b_h)
        h' = (1 - z) * n + z * h

    and the encoding of a prefix is ``out_proj @ h'``.
    """
    def init_params(self, num_items, dim, seed):
        if dim < 2:
            raise ShapeMismatchError('dim must be >= 2, got %s' % dim)
        rng = derive_rng(seed, 'init')
        bound = 1.0 / math.sqrt(dim)
        embeddings = rng.uniform(-bound, bound, size=(num_items + 1, dim))
        embeddings[num_items] = 0.0
        weights = [rng.uniform(-bound, bound, size=(dim, 2 * dim))
                   for _ in range(3)]
        return ModelParams(
            item_embeddings=embeddings,
            w_z=weights[0], w_r=weights[1], w_h=weights[2],
            b_z=np.zeros(dim), b_r=np.zeros(dim), b_h=np.zeros(dim),
            out_proj=np.eye(dim))

    def encode(self, params, seq):
        items = [int(i) for i in seq]
        if not items:
            raise ValueError('Cannot encode an empty sequence')
        rows = params.item_embeddings.shape[0]
        for item in items:
            if not 0 <= item < rows:
                raise ShapeMismatchError(
                    'Item id %s outside the embedding table of %s rows' % (
                        item, rows))
        dim = params.dim
        h = np.zeros(dim)
        inputs, hidden = [], [h]
        update_gates, reset_gates, candidates, outputs = [], [], [], []
        for item in items:
            x = params.item_embeddings[item]
            xh = np.concatenate([x, h])
            z = _sigmoid(params.w_z.dot(xh) + params.b_z)
            r = _sigmoid(params.w_r.dot(xh) + params.b_r)
            n = np.tanh(params.w_h.dot(np.concatenate([x, r * h])) +
                        params.b_h)
            h = (1.0 - z) * n + z * h
            inputs.append(x)
            hidden.append(h)
            update_gates.append(z)
            reset_gates.append(r)
            candidates.append(n)
            outputs.append(params.out_proj.dot(h))
        trace = EncodeTrace(items, inputs, hidden, update_gates,
                            reset_gates, candidates, outputs)
        return trace.final, trace

    def backward(self, params, trace, upstream_grad, step_grads=None):
        """Backpropagate through time

        :param upstream_grad: Gradient with respect to the final encoding,
            or ``None``.
        :param step_grads: Optional gradients with respect to every
            prefix encoding, one row per input step. They are added to
            ``upstream_grad`` at the last step.

        :returns: A ModelParams of gradients shaped like ``params``.
        """
        dim = params.dim
        if trace.dim != dim:
            raise ShapeMismatchError(
                'Trace has dimension %s, params have %s' % (trace.dim, dim))
        length = len(trace)
        if max(trace.items) >= params.item_embeddings.shape[0]:
            raise ShapeMismatchError(
                'Trace references item %s beyond the embedding table' % (
                    max(trace.items),))
        out_grads = np.zeros((length, dim))
        if step_grads is not None:
            step_grads = np.asarray(step_grads, dtype=np.float64)
            if step_grads.shape != (length, dim):
                raise ShapeMismatchError(
                    'step_grads has shape %s, expected %s' % (
                        step_grads.shape, (length, dim)))
            out_grads += step_grads
        if upstream_grad is not None:
            upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
            if upstream_grad.shape != (dim,):
                raise ShapeMismatchError(
                    'upstream_grad has shape %s, expected %s' % (
                        upstream_grad.shape, (dim,)))
            out_grads[-1] += upstream_grad

        grads = params.zeros_like()
        dh_next = np.zeros(dim)
        for t in reversed(range(length)):
            h = trace.hidden[t + 1]
            grads.out_proj += np.outer(out_grads[t], h)
            dh = dh_next + params.out_proj.T.dot(out_grads[t])

            h_prev = trace.hidden[t]
            x = trace.inputs[t]
            z = trace.update_gates[t]
            r = trace.reset_gates[t]
            n = trace.candidates[t]

            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dh_prev = dh * z

            da_n = dn * (1.0 - n * n)
            grads.w_h += np.outer(da_n, np.concatenate([x, r * h_prev]))
            grads.b_h += da_n
            dxrh = params.w_h.T.dot(da_n)
            dx = dxrh[:dim].copy()
            d_rh = dxrh[dim:]
            dr = d_rh * h_prev
            dh_prev += d_rh * r

            xh = np.concatenate([x, h_prev])
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            grads.w_r += np.outer(da_r, xh)
            grads.b_r += da_r
            grads.w_z += np.outer(da_z, xh)
            grads.b_z += da_z
            dxh = params.w_r.T.dot(da_r) + params.w_z.T.dot(da_z)
            dx += dxh[:dim]
            dh_prev += dxh[dim:]

            grads.item_embeddings[trace.items[t]] += dx
            dh_next = dh_prev
        return grads


default_encoder = GRUEncoder()


def init_params(num_items, dim, seed):
    """Fresh parameters, uniform in ``[-1/sqrt(d), 1/sqrt(d)]``

    Biases start at zero, ``out_proj`` at the identity and the mask row at
    zero.
    """
    return default_encoder.init_params(num_items, dim, seed)


def encode(params, seq):
    """Returns ``(h, trace)`` for a non-empty item sequence"""
    return default_encoder.encode(params, seq)


def score_items(params, h):
    return default_encoder.score_items(params, h)


def backward(params, trace, upstream_grad, step_grads=None):
    return default_encoder.backward(params, trace, upstream_grad, step_grads)
