import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from depthattr.harness import DEFAULT_LEARNING_RATE
from depthattr.models import ArchSpec, build_model, train
from depthattr.scenes import generate_dataset

settings.register_profile("ci", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

TRAIN_SEED = 1000
TRAIN_COUNT = 64
TRAIN_EPOCHS = 200


@pytest.fixture(scope="session")
def attention_model():
    return build_model("attention", seed=3)


@pytest.fixture(scope="session")
def conv_model():
    return build_model("conv", seed=3)


@pytest.fixture(scope="session")
def trained_attention():
    scenes = generate_dataset(TRAIN_SEED, TRAIN_COUNT)
    model, _ = train(build_model("attention", seed=0), scenes, TRAIN_EPOCHS, DEFAULT_LEARNING_RATE)
    return model


@pytest.fixture(scope="session")
def tiny_model():
    """8x8 attention model with a 2x2 grid of 4x4 patches."""
    return build_model("attention", ArchSpec(height=8, width=8, patch=4, embed=8, mlp=8), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
