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
import fortress


# Default embedding dimension and sequence cap.
DEFAULT_DIM = 32
DEFAULT_MAX_SEQ_LEN = 50

# Users with fewer interactions are dropped at load time.
MIN_SEQUENCE_LENGTH = 3

# Position markers produced by leave_one_out_split.
SPLIT_TRAIN = 'train'
SPLIT_VALID = 'valid'
SPLIT_TEST = 'test'

PROVENANCE_BENIGN = 'benign'
PROVENANCE_MALICIOUS = 'malicious'

ATTACK_KINDS = ['none', 'promotion', 'camouflage']
AGGREGATION_RULES = ['fedavg', 'median', 'trimmed_mean', 'norm_bounded']
CONTRASTIVE_VIEWS = ['sequence', 'user', 'item']
WEIGHT_BY_CHOICES = ['interactions', 'samples']

# Contrastive defaults: user-view negatives use inflated noise and the
# item view jitters each perturbed copy by a fraction of the step.
DEFAULT_NEG_COUNT = 4
USER_NEGATIVE_NOISE_SCALE = 4.0
ITEM_VIEW_JITTER = 0.1

# Global-norm gradient clip applied to every local SGD step.
DEFAULT_CLIP_NORM = 5.0

CSV_HEADER = ['user_id', 'item_id', 'timestamp']

CHECKPOINT_FORMAT_VERSION = 1
METRICS_FILENAME = 'metrics.jsonl'
CONFIG_ECHO_FILENAME = 'config.echo'
CHECKPOINT_DIRNAME = 'checkpoints'

USER_AGENT = 'fortress/%s' % fortress.__version__
