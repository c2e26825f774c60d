"""Shared fixtures for the versionci test suite"""
import pytest

from versionci.cohort import FullMatch
from versionci.config import get_settings
from versionci.interval_engine import VersionData
from versionci.test_data_generator import TestDataGenerator


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    """Run every test with one worker unless a test overrides VE_THREADS"""
    monkeypatch.setenv('VE_THREADS', '1')
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def generator():
    return TestDataGenerator(seed=11)


@pytest.fixture
def single_pair():
    """One 1-1 set: treated 2, control 1"""
    return FullMatch.from_arrays([2.0, 1.0], [True, False], [1, 1])


@pytest.fixture
def two_set_match():
    """A 1-1 set with D=2 and a 1-3 set with D=0"""
    return FullMatch.from_arrays(
        [3.0, 1.0, 1.0, 0.0, 1.0, 2.0],
        [True, False, True, False, False, False],
        [1, 1, 2, 2, 2, 2],
    )


@pytest.fixture
def version_data(generator):
    cohorts = generator.version_cohorts(sets=40, tau_b=0.3, delta=0.2)
    return VersionData(
        all=FullMatch.from_cohort(cohorts['all']),
        only_a=FullMatch.from_cohort(cohorts['a']),
        only_b=FullMatch.from_cohort(cohorts['b']),
    )


@pytest.fixture
def version_csvs(generator, tmp_path):
    return generator.write_version_fixtures(tmp_path / 'fixtures', sets=25, tau_b=0.3, delta=0.2)
