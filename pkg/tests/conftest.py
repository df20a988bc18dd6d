import numpy as np
import pytest

from flowmoe import nn
from flowmoe.augment import AugmentParams
from flowmoe.experts import train_experts

import helpers


@pytest.fixture(scope="session")
def toy_data():
    """(train_graphs, test_graphs, stats) for a small separable problem."""
    return helpers.normalized_toy_graphs(n_train=3, n_test=2, seed=0)


@pytest.fixture(scope="session")
def toy_bundle(toy_data):
    """Experts trained without augmentation on the toy problem."""
    train_graphs, _, stats = toy_data
    config = nn.TrainConfig(learning_rate=1e-2, epochs=30, seed=11)
    bundle, history = train_experts(train_graphs, stats, AugmentParams(), config)
    return bundle, history


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
