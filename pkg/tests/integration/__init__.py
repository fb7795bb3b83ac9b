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
"""Desk-scale experiments checking learning, attack and defense behavior

These train real models for tens of rounds and take minutes, so they are
marked ``slow`` and run in their own tox environment.
"""
import pytest

from tests import FileCreator
from tests import unittest


@pytest.mark.slow
class BaseExperimentTest(unittest.TestCase):
    def setUp(self):
        self.files = FileCreator()

    def tearDown(self):
        self.files.remove_all()

    def output_dir(self, name):
        return self.files.full_path(name)
