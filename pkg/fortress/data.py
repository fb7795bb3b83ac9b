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
"""Interaction data: ingestion, synthetic generation, splits, augmentation

A :class:`Dataset` is immutable once built; augmentation helpers take the
caller's generator and never touch the sequences they are given.
"""
import collections
import csv
import logging
import math
import re

import numpy as np
import pandas as pd

from fortress.constants import CSV_HEADER
from fortress.constants import DEFAULT_MAX_SEQ_LEN
from fortress.constants import MIN_SEQUENCE_LENGTH
from fortress.constants import SPLIT_TEST
from fortress.constants import SPLIT_TRAIN
from fortress.constants import SPLIT_VALID
from fortress.exceptions import DataError
from fortress.exceptions import EmptyDatasetError
from fortress.exceptions import ParseError
from fortress.utils import BaseConfig
from fortress.utils import parse_bool


logger = logging.getLogger(__name__)

# Never present in a well-formed interaction file.
RAW_LINE_SEPARATOR = '\x1f'
TOKENIZER_LINE_RE = re.compile(r'line (\d+)')


Interaction = collections.namedtuple(
    'Interaction', ['user_id', 'item_id', 'timestamp'])


class InteractionSequence(object):
    """One user's time-ordered items, optionally carrying split markers"""
    def __init__(self, user_id, items, split=None):
        self._user_id = user_id
        self._items = tuple(int(i) for i in items)
        self._split = tuple(split) if split is not None else None
        if self._split is not None and len(self._split) != len(self._items):
            raise DataError(
                'Split markers (%s) do not match sequence length (%s) '
                'for user %s' % (len(self._split), len(self._items), user_id))

    def __repr__(self):
        return 'InteractionSequence(user_id=%s, length=%s)' % (
            self._user_id, len(self._items))

    def __len__(self):
        return len(self._items)

    def __eq__(self, other):
        if not isinstance(other, InteractionSequence):
            return NotImplemented
        return (self._user_id, self._items, self._split) == (
            other._user_id, other._items, other._split)

    @property
    def user_id(self):
        return self._user_id

    @property
    def items(self):
        return list(self._items)

    @property
    def split(self):
        return list(self._split) if self._split is not None else None

    @property
    def is_split(self):
        return self._split is not None

    def _with_marker(self, marker):
        self._require_split()
        return [item for item, mark in zip(self._items, self._split)
                if mark == marker]

    def _require_split(self):
        if self._split is None:
            raise DataError(
                'Sequence for user %s has no split markers' % self._user_id)

    @property
    def train_items(self):
        return self._with_marker(SPLIT_TRAIN)

    @property
    def valid_target(self):
        return self._with_marker(SPLIT_VALID)[0]

    @property
    def test_target(self):
        return self._with_marker(SPLIT_TEST)[0]

    @property
    def test_history(self):
        """Everything before the test target (train items + valid target)"""
        self._require_split()
        return list(self._items[:-1])


class Dataset(object):
    def __init__(self, num_users, num_items, sequences, metadata=None):
        """An immutable collection of per-user interaction sequences

        :type num_users: int
        :param num_users: N, the number of users.

        :type num_items: int
        :param num_items: M, the number of real items. Item id ``M`` is the
            reserved mask token and never appears in stored sequences.

        :type sequences: dict
        :param sequences: Mapping of user id to InteractionSequence.

        :type metadata: dict
        :param metadata: Free-form provenance (source path, dropped-user
            count, synthetic ground truth).
        """
        self._num_users = num_users
        self._num_items = num_items
        self._sequences = dict(sequences)
        self._metadata = dict(metadata or {})
        for user_id, sequence in self._sequences.items():
            if not 0 <= user_id < num_users:
                raise DataError('User id %s outside [0, %s)' % (
                    user_id, num_users))
            for item in sequence.items:
                if not 0 <= item < num_items:
                    raise DataError(
                        'Item id %s of user %s outside [0, %s)' % (
                            item, user_id, num_items))

    def __repr__(self):
        return 'Dataset(num_users=%s, num_items=%s)' % (
            self._num_users, self._num_items)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self._num_users == other._num_users and
                self._num_items == other._num_items and
                self._sequences == other._sequences)

    @property
    def num_users(self):
        return self._num_users

    @property
    def num_items(self):
        return self._num_items

    @property
    def mask_id(self):
        return self._num_items

    @property
    def sequences(self):
        return dict(self._sequences)

    @property
    def metadata(self):
        return dict(self._metadata)

    @property
    def user_ids(self):
        return sorted(self._sequences)

    def sequence(self, user_id):
        return self._sequences[user_id]

    def with_sequences(self, sequences, **extra_metadata):
        metadata = dict(self._metadata)
        metadata.update(extra_metadata)
        return Dataset(self._num_users, self._num_items, sequences, metadata)


class DataConfig(BaseConfig):
    SECTION = 'data'
    FIELD_TYPES = {
        'source': str,
        'path': str,
        'num_users': int,
        'num_items': int,
        'seq_len_min': int,
        'seq_len_max': int,
        'transition_skew': float,
        'popularity_exponent': float,
        'seed': int,
        'max_seq_len': int,
        'repeat_free': parse_bool,
    }

    def __init__(self, source='synthetic', path='', num_users=200,
                 num_items=200, seq_len_min=8, seq_len_max=20,
                 transition_skew=0.8, popularity_exponent=1.0, seed=0,
                 max_seq_len=DEFAULT_MAX_SEQ_LEN, repeat_free=True):
        """Where interactions come from

        :param source: ``synthetic`` or ``csv``.
        :param path: CSV path when ``source`` is ``csv``.
        :param num_users: Synthetic user count.
        :param num_items: Synthetic catalog size (>= 10).
        :param seq_len_min: Shortest synthetic sequence (>= 3).
        :param seq_len_max: Longest synthetic sequence.
        :param transition_skew: Successor mass concentrated on each item's
            favored successor.
        :param popularity_exponent: Zipf exponent of the popularity prior.
        :param seed: Generator seed for synthetic data.
        :param max_seq_len: Most recent interactions kept per user.
        :param repeat_free: Resample synthetic draws that repeat an item
            already in the user's history.
        """
        self.source = source
        self.path = path
        self.num_users = num_users
        self.num_items = num_items
        self.seq_len_min = seq_len_min
        self.seq_len_max = seq_len_max
        self.transition_skew = transition_skew
        self.popularity_exponent = popularity_exponent
        self.seed = seed
        self.max_seq_len = max_seq_len
        self.repeat_free = repeat_free
        self._validate()

    def _validate(self):
        self._require(self.source in ('synthetic', 'csv'), 'source',
                      'must be synthetic or csv')
        if self.source == 'csv':
            self._require(bool(self.path), 'path', 'required for csv data')
        self._require(self.num_users >= 1, 'num_users', 'must be >= 1')
        self._require(self.num_items >= 10, 'num_items', 'must be >= 10')
        self._require(self.seq_len_min >= MIN_SEQUENCE_LENGTH, 'seq_len_min',
                      'must be >= %s' % MIN_SEQUENCE_LENGTH)
        self._require(self.seq_len_max >= self.seq_len_min, 'seq_len_max',
                      'must be >= seq_len_min')
        self._require(0.0 <= self.transition_skew <= 1.0, 'transition_skew',
                      'must be in [0, 1]')
        self._require(self.popularity_exponent >= 0.0, 'popularity_exponent',
                      'must be >= 0')
        self._require(self.max_seq_len >= MIN_SEQUENCE_LENGTH, 'max_seq_len',
                      'must be >= %s' % MIN_SEQUENCE_LENGTH)
        if self.repeat_free and self.source == 'synthetic':
            self._require(self.num_items > self.seq_len_max, 'num_items',
                          'must exceed seq_len_max for repeat-free sequences')


class AugmentationPolicy(BaseConfig):
    SECTION = 'augmentation'
    FIELD_TYPES = {
        'crop_prob': float,
        'mask_prob': float,
        'reorder_prob': float,
        'crop_ratio': float,
        'mask_ratio': float,
        'reorder_window': int,
    }

    def __init__(self, crop_prob=0.5, mask_prob=0.5, reorder_prob=0.5,
                 crop_ratio=0.6, mask_ratio=0.3, reorder_window=3):
        self.crop_prob = crop_prob
        self.mask_prob = mask_prob
        self.reorder_prob = reorder_prob
        self.crop_ratio = crop_ratio
        self.mask_ratio = mask_ratio
        self.reorder_window = reorder_window
        self._validate()

    @classmethod
    def identity(cls):
        """A policy that never transforms (bypasses the nonzero check)"""
        policy = cls.__new__(cls)
        policy.crop_prob = policy.mask_prob = policy.reorder_prob = 0.0
        policy.crop_ratio = policy.mask_ratio = 1.0
        policy.reorder_window = 1
        return policy

    def _validate(self):
        for name in ('crop_prob', 'mask_prob', 'reorder_prob'):
            self._require(0.0 <= getattr(self, name) <= 1.0, name,
                          'must be in [0, 1]')
        self._require(
            max(self.crop_prob, self.mask_prob, self.reorder_prob) > 0,
            'crop_prob', 'at least one probability must be > 0')
        self._require(0.0 < self.crop_ratio <= 1.0, 'crop_ratio',
                      'must be in (0, 1]')
        self._require(0.0 < self.mask_ratio <= 1.0, 'mask_ratio',
                      'must be in (0, 1]')
        self._require(self.reorder_window >= 1, 'reorder_window',
                      'must be >= 1')


def _read_lines(path):
    # One string per physical line, blank lines included, so that the
    # index of a row is its 0-based file line.
    try:
        frame = pd.read_csv(
            path, sep=RAW_LINE_SEPARATOR, header=None, names=['line'],
            dtype=str, keep_default_na=False, skip_blank_lines=False,
            quoting=csv.QUOTE_NONE, encoding='utf-8')
    except pd.errors.EmptyDataError:
        return pd.Series([], dtype=object)
    except pd.errors.ParserError as e:
        match = TOKENIZER_LINE_RE.search(str(e))
        raise ParseError(int(match.group(1)) if match else '?',
                         'unreadable row: %s' % str(e).strip())
    return frame['line'].fillna('').str.rstrip('\r')


def load_interactions(path, max_seq_len=DEFAULT_MAX_SEQ_LEN,
                      min_length=MIN_SEQUENCE_LENGTH):
    """Load a ``user_id,item_id,timestamp`` CSV into a Dataset

    User and item ids are re-indexed densely from 0 in ascending order of
    the original ids among kept rows. Each user's interactions are sorted by
    timestamp with ties broken by file order, truncated to the most recent
    ``max_seq_len``, and users with fewer than ``min_length`` interactions
    are dropped. Duplicate rows are kept.

    :raises ParseError: On a missing header or malformed row; names the
        1-based file line.
    :raises EmptyDatasetError: If no user survives filtering.
    """
    lines = _read_lines(path)
    header = lines.iloc[0] if len(lines) else ''
    if [field.strip() for field in header.split(',')] != CSV_HEADER:
        raise ParseError(1, 'expected header %s, got %r' % (
            ','.join(CSV_HEADER), header))
    body = lines.iloc[1:]
    body = body[body.str.strip() != '']
    if body.empty:
        raise EmptyDatasetError('No interactions in %s' % path)

    fields = body.str.split(',', expand=True)
    if fields.shape[1] < len(CSV_HEADER):
        fields = fields.reindex(columns=range(len(CSV_HEADER)))
    numeric = fields.iloc[:, :len(CSV_HEADER)].apply(
        lambda col: pd.to_numeric(col.astype(str).str.strip(),
                                  errors='coerce'))
    numeric.columns = CSV_HEADER
    bad_rows = (
        (body.str.count(',') != len(CSV_HEADER) - 1) |
        numeric.isna().any(axis=1) | (numeric % 1 != 0).any(axis=1))
    if bad_rows.any():
        position = int(np.flatnonzero(bad_rows.to_numpy())[0])
        raise ParseError(
            int(body.index[position]) + 1,
            'malformed row %r' % body.iloc[position])
    numeric = numeric.astype(np.int64).reset_index(drop=True)
    numeric['_order'] = np.arange(len(numeric))

    counts = numeric.groupby('user_id')['item_id'].transform('size')
    dropped_users = int(numeric.loc[counts < min_length, 'user_id'].nunique())
    kept = numeric.loc[counts >= min_length]
    if dropped_users:
        logger.warning(
            'Dropped %s users with fewer than %s interactions',
            dropped_users, min_length)
    if kept.empty:
        raise EmptyDatasetError(
            'No users with at least %s interactions in %s' % (
                min_length, path))

    user_codes, _ = pd.factorize(kept['user_id'], sort=True)
    item_codes, item_uniques = pd.factorize(kept['item_id'], sort=True)
    kept = kept.assign(user_id=user_codes, item_id=item_codes)
    kept = kept.sort_values(
        ['user_id', 'timestamp', '_order'], kind='mergesort')

    sequences = {}
    for user_id, group in kept.groupby('user_id', sort=True):
        items = group['item_id'].tolist()[-max_seq_len:]
        sequences[int(user_id)] = InteractionSequence(int(user_id), items)
    return Dataset(
        num_users=len(sequences), num_items=len(item_uniques),
        sequences=sequences,
        metadata={'source': str(path), 'dropped_users': dropped_users})


def write_interactions(dataset, path):
    """Write a Dataset as ``user_id,item_id,timestamp`` rows

    Timestamps are the positions within each sequence, so loading the file
    back reproduces the same order.
    """
    rows = []
    for user_id in dataset.user_ids:
        for position, item in enumerate(dataset.sequence(user_id).items):
            rows.append((user_id, item, position))
    frame = pd.DataFrame(rows, columns=CSV_HEADER)
    frame.to_csv(path, index=False, lineterminator='\n')


def popularity_prior(num_items, exponent, rng):
    """Zipf-like probabilities over a random ranking of the items"""
    ranking = rng.permutation(num_items)
    weights = 1.0 / np.power(np.arange(1, num_items + 1, dtype=np.float64),
                             exponent)
    prior = np.empty(num_items, dtype=np.float64)
    prior[ranking] = weights / weights.sum()
    return prior


def synth_generate(num_users, num_items, seq_len_range, markov_order=1,
                   transition_skew=0.8, seed=0, popularity_exponent=1.0,
                   repeat_free=True):
    """Generate sequences from a planted first-order Markov chain

    Every item gets one favored successor; the favored successors form a
    single random cycle through the catalog. From item ``i`` the next item
    is the favored successor with probability ``transition_skew`` and
    otherwise a draw from a Zipf-like popularity prior, which is the same
    distribution for every item. With ``transition_skew=0`` the next item
    therefore does not depend on the current one.

    :param seq_len_range: ``(min_len, max_len)`` inclusive.
    :param repeat_free: Redraw from the prior when a draw repeats an item
        already in the user's history.

    :returns: A Dataset whose metadata carries ``successors`` (favored
        successor per item) and ``prior``.
    """
    if num_items < 10:
        raise DataError('num_items must be >= 10, got %s' % num_items)
    if transition_skew < 0:
        raise DataError(
            'transition_skew must be >= 0, got %s' % transition_skew)
    if markov_order != 1:
        raise DataError('Only markov_order=1 is supported')
    min_len, max_len = seq_len_range
    if min_len < MIN_SEQUENCE_LENGTH or max_len < min_len:
        raise DataError('Invalid seq_len_range %s' % (seq_len_range,))
    if repeat_free and max_len >= num_items:
        raise DataError(
            'Repeat-free sequences need num_items > max length')

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5eed]))
    prior = popularity_prior(num_items, popularity_exponent, rng)
    cycle = rng.permutation(num_items)
    successors = np.empty(num_items, dtype=np.int64)
    successors[cycle] = np.roll(cycle, -1)

    sequences = {}
    for user_id in range(num_users):
        length = int(rng.integers(min_len, max_len + 1))
        seen = set()
        items = [_draw_from_prior(prior, seen, repeat_free, rng)]
        seen.add(items[0])
        while len(items) < length:
            if rng.random() < transition_skew:
                candidate = int(successors[items[-1]])
                if repeat_free and candidate in seen:
                    candidate = _draw_from_prior(prior, seen, True, rng)
            else:
                candidate = _draw_from_prior(prior, seen, repeat_free, rng)
            items.append(candidate)
            seen.add(candidate)
        sequences[user_id] = InteractionSequence(user_id, items)
    logger.debug('Generated %s synthetic users over %s items',
                 num_users, num_items)
    return Dataset(
        num_users=num_users, num_items=num_items, sequences=sequences,
        metadata={'source': 'synthetic', 'seed': seed,
                  'transition_skew': transition_skew,
                  'successors': successors, 'prior': prior})


def _draw_from_prior(prior, seen, repeat_free, rng):
    if not repeat_free or not seen:
        return int(rng.choice(prior.shape[0], p=prior))
    masked = prior.copy()
    masked[list(seen)] = 0.0
    return int(rng.choice(prior.shape[0], p=masked / masked.sum()))


def leave_one_out_split(dataset):
    """Mark the last item as test target and the one before as valid target

    Sequences shorter than three are skipped and reported. Item content is
    never changed.
    """
    sequences = {}
    skipped = []
    for user_id in dataset.user_ids:
        sequence = dataset.sequence(user_id)
        if len(sequence) < MIN_SEQUENCE_LENGTH:
            skipped.append(user_id)
            continue
        split = [SPLIT_TRAIN] * (len(sequence) - 2) + [SPLIT_VALID, SPLIT_TEST]
        sequences[user_id] = InteractionSequence(
            user_id, sequence.items, split)
    if skipped:
        logger.warning('Skipped %s users too short to split: %s',
                       len(skipped), skipped)
    return dataset.with_sequences(sequences, split_skipped=skipped)


def augment_sequence(seq, policy, rng, mask_id):
    """Apply crop, mask and reorder, each gated by its probability

    :param seq: A list of item ids; never modified.
    :param policy: The AugmentationPolicy.
    :param rng: The caller's numpy Generator.
    :param mask_id: The reserved mask token (``M``).

    :returns: A new list of length >= 1. Sequences shorter than two are
        returned unchanged.
    """
    result = list(seq)
    if len(result) < 2:
        return result
    if rng.random() < policy.crop_prob:
        keep = max(1, int(math.floor(policy.crop_ratio * len(result))))
        start = int(rng.integers(0, len(result) - keep + 1))
        result = result[start:start + keep]
    if rng.random() < policy.mask_prob:
        count = min(len(result),
                    int(math.ceil(policy.mask_ratio * len(result))))
        for position in rng.choice(len(result), count, replace=False):
            result[int(position)] = mask_id
    if rng.random() < policy.reorder_prob:
        window = min(policy.reorder_window, len(result))
        if window > 1:
            start = int(rng.integers(0, len(result) - window + 1))
            segment = result[start:start + window]
            result[start:start + window] = [
                segment[int(i)] for i in rng.permutation(window)]
    return result


def derangement(seq, rng, max_tries=16):
    """Shuffle positions so that no position keeps its original index

    Falls back to a rotation by one after ``max_tries`` rejected draws.
    """
    length = len(seq)
    if length < 2:
        return list(seq)
    for _ in range(max_tries):
        order = rng.permutation(length)
        if not np.any(order == np.arange(length)):
            return [seq[int(i)] for i in order]
    return list(seq[1:]) + [seq[0]]


def adjacent_subsequences(seq, window):
    """Two windows offset by one, taken from the tail of ``seq``

    The window shrinks to ``len(seq) - 1`` when the sequence is too short.

    :returns: ``(S_t, S_t+1)``, or ``None`` when ``len(seq) < 2``.
    """
    seq = list(seq)
    if len(seq) < 2:
        return None
    window = max(1, min(window, len(seq) - 1))
    end = len(seq)
    return seq[end - window - 1:end - 1], seq[end - window:end]


def item_counts(dataset, train_only=False):
    counts = np.zeros(dataset.num_items, dtype=np.int64)
    for user_id in dataset.user_ids:
        sequence = dataset.sequence(user_id)
        items = sequence.train_items if train_only else sequence.items
        for item in items:
            counts[item] += 1
    return counts


def most_popular(dataset, fraction):
    """Top ``ceil(fraction * M)`` items by interaction count (at least one)

    Ties go to the lower item id.
    """
    counts = item_counts(dataset)
    size = max(1, int(math.ceil(fraction * dataset.num_items)))
    order = np.lexsort((np.arange(dataset.num_items), -counts))
    return [int(i) for i in order[:size]]
