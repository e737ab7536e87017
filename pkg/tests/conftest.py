import hypothesis
import pytest

from orthoplr.dgp import generate_dataset, generate_instance
from orthoplr.rng import derive_rng

hypothesis.settings.register_profile(
    "ci", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance(p=20, s=5, rng=derive_rng(1234, 1))


@pytest.fixture(scope="session")
def small_dataset(small_instance):
    return generate_dataset(small_instance, 2000, derive_rng(1234, 2))
