"""Shared fixtures; long-running acceptance checks only run with --runslow."""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from fluid_agents.envs import make_env  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def predprey():
    return make_env("predator_prey", {"grid_size": 7, "n_prey": 3, "n_max": 4, "initial_agents": 2,
                                      "view_size": 5}, seed=0)


@pytest.fixture
def lbf():
    return make_env("lbf", {"grid_size": 6, "food_levels": (2, 3), "initial_levels": (1, 2), "n_max": 3}, seed=0)


@pytest.fixture
def puddle():
    return make_env("puddle_bridge", {"n_max": 4}, seed=0)


@pytest.fixture
def games_dir():
    return ROOT / "games"
