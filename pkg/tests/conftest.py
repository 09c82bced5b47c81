import numpy as np
import pytest

from saddlerb.constants import build_training
from saddlerb.greedy import GreedyConfig, greedy_run, sample_train_set
from saddlerb.stokes import BenchmarkConfig, build_truth


@pytest.fixture(scope="session")
def disc():
    """Coarse truth discretization (refinement 0, about 1,500 unknowns)."""
    return build_truth(BenchmarkConfig(refinement=0))


@pytest.fixture(scope="session")
def train(disc):
    return sample_train_set(disc.domain, 24, seed=0)


@pytest.fixture(scope="session")
def training(disc, train):
    return build_training(disc, train)


@pytest.fixture(scope="session")
def greedy_v1(disc, train, training):
    """Small variant-1 greedy run: ``(space, model, trace)``."""
    cfg = GreedyConfig(variant=1, tol=1e-3, n_max=6, train_size=len(train))
    return greedy_run(disc, cfg, train, training)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
