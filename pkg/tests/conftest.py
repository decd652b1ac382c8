import functools

import numpy as np
import pytest
from hypothesis import settings

from noisemorph.image import load_bundled

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def _bundled(name):
    img = load_bundled(name)
    img.setflags(write=False)
    return img


@pytest.fixture
def bundled():
    return _bundled


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
