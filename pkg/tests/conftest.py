import numpy as np
import pytest

from scenecodec.config import RunConfig
from scenecodec.graph import default_class_table


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(scope="session")
def class_table():
    return default_class_table()


def tiny_config(**overrides) -> RunConfig:
    """Desk-size model config shared by the heavier integration tests."""
    base = dict(
        seed=1,
        d_f=32,
        d_p=16,
        d_s=8,
        heads=2,
        blocks=2,
        dropout=0.0,
        d_fc=16,
        n_points={1: 64, 2: 64, 3: 64, 4: 64},
        latent_dims={1: 8, 2: 8, 3: 8, 4: 8},
        batch_size=4,
        epochs=1,
    )
    base.update(overrides)
    return RunConfig(**base)
