import numpy as np
import pytest

from vdlab.envs import coordination_counterexample, make_aliased_frozenlake


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def lake():
    return make_aliased_frozenlake()


@pytest.fixture
def open_lake():
    return make_aliased_frozenlake(alias_groups="identity")


@pytest.fixture
def aliased_game():
    return coordination_counterexample("constant")
