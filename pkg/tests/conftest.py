import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def random_psd(rng, dim, scale=1.0):
    g = rng.standard_normal((dim, dim))
    return scale * (g @ g.T) / dim


def random_sym(rng, dim):
    g = rng.standard_normal((dim, dim))
    return g + g.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
