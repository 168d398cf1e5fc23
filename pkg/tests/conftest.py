import json
from pathlib import Path

import numpy as np
import pytest


@pytest.fixture(scope="session")
def oracles() -> dict:
    path = Path(__file__).parent / "oracles" / "expected.json"
    return json.loads(path.read_text())


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
