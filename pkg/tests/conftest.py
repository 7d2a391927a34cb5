import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from intervalq.core import IntervalDataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_intervals(rng, n, spread=1.0, width=1.0, point_frac=0.0):
    lo = rng.normal(scale=spread, size=n)
    w = rng.random(n) * width
    w[rng.random(n) < point_frac] = 0.0
    return IntervalDataset(lo, lo + w)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
