import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from accommodation.corpus import gen_corpus  # noqa: E402
from accommodation.plant import speaker  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return gen_corpus(speaker("RS"), 20, seed=3)
