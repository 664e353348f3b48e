import numpy as np
import pytest

from hodn.config import RunConfig


@pytest.fixture
def desk():
    return RunConfig()


@pytest.fixture
def tiny():
    """Smallest configuration the scene generator accepts."""
    return RunConfig(d=8, heads=2, encoder_layers=1, decoder_layers=2, num_queries=4,
                     num_obj_classes=2, num_actions=2, channels=5, grid_h=4, grid_w=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
