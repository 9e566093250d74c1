import numpy as np
import pytest

from seasoncast import GridSeries, MonthStamp, NormStats


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_series(rng):
    """40 months of random 6x8 fields starting 2000-01."""
    values = rng.normal(10.0, 5.0, size=(40, 6, 8)).astype(np.float32)
    return GridSeries(MonthStamp(2000, 1), values)


@pytest.fixture
def unit_stats():
    return NormStats(0.0, 1.0, "unit")
