import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from srasym.core import SourceInstance, hamming  # noqa: E402

QUATERNARY = [1 / 3, 1 / 4, 1 / 4, 1 / 6]


@pytest.fixture
def binary02():
    return SourceInstance([0.2, 0.8], hamming(2), hamming(2), 0.15, 0.05)


@pytest.fixture
def binary03():
    return SourceInstance([0.3, 0.7], hamming(2), hamming(2), 0.15, 0.05)


@pytest.fixture
def quaternary():
    return SourceInstance(QUATERNARY, hamming(4), hamming(4), 0.6, 0.3)


@pytest.fixture
def asymmetric():
    return SourceInstance([0.5, 0.5], hamming(2), np.array([[0.0, 1.0], [2.0, 0.0]]), 0.25, 0.15)
