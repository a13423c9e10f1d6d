# -*- coding: utf-8 -*-
import pytest
from sqlalchemy.pool import StaticPool
from ddcRegularLM.automaton import geometric_automaton, two_branch_automaton
from ddcRegularLM.dataset import build_dataset
from ddcRegularLM.store import ResultsStore
from tests.data.base_data import get_fake_test_data, random_automaton


@pytest.fixture(name="store_session", scope="session")
def store_session():
    extra_engine_args = {"poolclass": StaticPool}
    with ResultsStore(
        filepath=":memory:",
        extra_engine_args=extra_engine_args,
    ) as session:
        yield session


@pytest.fixture(name="fake_test_data", scope="session")
def fake_test_data():
    fdata = get_fake_test_data()
    yield fdata


@pytest.fixture(name="geometric", scope="session")
def geometric():
    return geometric_automaton()


@pytest.fixture(name="two_branch", scope="session")
def two_branch():
    return two_branch_automaton()


@pytest.fixture(name="random_automata", scope="session")
def random_automata():
    return [random_automaton(seed, q, s) for seed, (q, s) in enumerate([(2, 2), (3, 2), (4, 3), (4, 4), (6, 3)])]


@pytest.fixture(name="two_branch_dataset", scope="session")
def two_branch_dataset(two_branch):
    return build_dataset(two_branch, seed=7, size=1500, max_len=64, min_test=300)
