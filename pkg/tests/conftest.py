import os

import pytest
from hypothesis import HealthCheck, settings

from leakymap.intervals import NeighborhoodPartition, OpenIntervalSet, QuadMap, build_tables

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def qmap():
    return QuadMap(2.0)


@pytest.fixture(scope="session")
def partition():
    return NeighborhoodPartition(6)


@pytest.fixture(scope="session")
def tables(qmap, partition):
    return build_tables(qmap, partition, 0.4)


@pytest.fixture(scope="session")
def ref_hole():
    return OpenIntervalSet.from_pairs([(0.3, 0.31)])
