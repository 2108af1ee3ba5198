import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from usdemosaic.sfa import SFAPattern  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def p22():
    return SFAPattern(np.array([[0, 1], [2, 3]]))


@pytest.fixture
def p33():
    return SFAPattern(np.array([[4, 0, 7], [2, 8, 5], [1, 6, 3]]))
