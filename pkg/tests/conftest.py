import numpy as np
import pytest

from jumpou import ModelParams, RngStream, SamplingScheme, simulate_path


@pytest.fixture
def unit_params():
    return ModelParams(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def short_path():
    """Seeded n=50 path at (1, 0.8, 2), delta=0.1."""
    return simulate_path(ModelParams(1.0, 0.8, 2.0), SamplingScheme(50, 0.1, 0.3), RngStream(2024, 0))


def random_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(rng.uniform(0.2, 3.0), rng.uniform(0.3, 2.0), rng.uniform(0.2, 3.0))
