import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from iml import model_zoo
from iml.space import spectral_decompose

settings.register_profile("iml", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("iml")


@st.composite
def random_models(draw, n_min=2, n_max=5, kill_prob=0.5):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(n_min, n_max))
    return model_zoo.random_model(np.random.default_rng(seed), n, kill_prob)


@pytest.fixture(scope="session")
def zoo():
    return model_zoo.example_models()


@pytest.fixture(scope="session")
def specs(zoo):
    return {k: spectral_decompose(v) for k, v in zoo.items()}
