import numpy as np
import pytest

from sensopt.nets import Conv, Dense, Flatten, MaxPool2, ReLU, build_net

TINY_LAYERS = [Conv(4, 3, 1, 1), ReLU(), MaxPool2(),
               Conv(6, 3, 1, 1), ReLU(), Flatten(), Dense(3)]
TINY_SHAPE = (1, 12, 12)
TINY_CLASSES = ["alpha", "beta", "gamma"]


@pytest.fixture(scope="session")
def tiny_net():
    """Small untrained net: cheap forward passes for numerics tests."""
    return build_net(TINY_LAYERS, TINY_SHAPE, TINY_CLASSES, seed=7)


@pytest.fixture(scope="session")
def tiny_rgb_net():
    return build_net(TINY_LAYERS, (3, 12, 12), TINY_CLASSES, seed=8)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_image(rng, shape=TINY_SHAPE, lo=0.1, hi=0.9):
    return rng.uniform(lo, hi, shape).astype(np.float32)
