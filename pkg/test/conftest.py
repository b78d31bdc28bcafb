"""公共 fixture"""

import numpy as np
import pytest
from hypothesis import settings

from app.config import config

settings.register_profile("bellsim", max_examples=200, deadline=None)
settings.load_profile("bellsim")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def no_metrics(monkeypatch):
    monkeypatch.setattr(config, "METRICS_ENABLED", False)
