import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import ExperimentConfig
from src.services.problem_service import ProblemService

RUN_BENCHMARK = os.getenv("STOCHNS_RUN_BENCHMARK", "0") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_BENCHMARK:
        return
    skip = pytest.mark.skip(reason="set STOCHNS_RUN_BENCHMARK=1 to run full-size benchmarks")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)


def tiny_config(**overrides) -> ExperimentConfig:
    """Channel instance small enough for dense comparisons (n_t=4, n_xi=3)."""
    values = dict(
        domain="channel", h=0.5, tau=0.25, t_f=1.0, m=2, d_psi=1, sigma=0.01, output_dir="results/test"
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_setup():
    return ProblemService.build(tiny_config())


@pytest.fixture(scope="session")
def deterministic_setup():
    return ProblemService.build(tiny_config(sigma=0.0, m=0))
