import numpy as np
import pytest

from mvrcodec.frames import Frame420
from mvrcodec.model import default_config, generate_weights


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def weight_cache(config):
    """Memoized weight sets; generation is the slow part of most tests."""
    cache = {}

    def get(quality=2, seed=0, precision="f32"):
        key = (quality, seed, precision)
        if key not in cache:
            cache[key] = generate_weights(config, quality=quality, seed=seed,
                                          precision=precision)
        return cache[key]

    return get


def make_frame(rng: np.random.Generator, height: int, width: int) -> Frame420:
    return Frame420(
        rng.integers(0, 256, (height, width), dtype=np.uint8),
        rng.integers(0, 256, (height // 2, width // 2), dtype=np.uint8),
        rng.integers(0, 256, (height // 2, width // 2), dtype=np.uint8),
    )


@pytest.fixture
def frame_factory():
    return make_frame
