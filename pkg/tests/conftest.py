import numpy as np
import pytest

from app.engine.tensor import set_debug_validation
from app.models.schemas import ActivationKind, NetworkSpec, PBConfig
from app.services.dataset_service import gen_two_spirals


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite the measured cells of tests/golden/*.json from this run")


@pytest.fixture(autouse=True)
def debug_validation():
    set_debug_validation(True)
    yield
    set_debug_validation(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spirals():
    return gen_two_spirals(40, 1.75, 0.05, seed=3).split(seed=4)


@pytest.fixture
def small_spec():
    return NetworkSpec.mlp([2, 8, 8, 2], ActivationKind.TANH, seed=5)


@pytest.fixture
def fast_config():
    return PBConfig(
        pool_size=3,
        candidate_epochs=4,
        max_normal_epochs=6,
        normal_patience=3,
        dendrite_patience=2,
        max_cycles=2,
        batch_size=16,
        lr_main=0.1,
        lr_candidate=0.05,
    )


@pytest.fixture
def conv_spec():
    return NetworkSpec.model_validate({
        "input_shape": [1, 6, 6],
        "layers": [
            {"kind": "conv2d", "in_channels": 1, "out_channels": 4, "stride": 2, "padding": 1},
            {"kind": "activation", "activation": "relu"},
            {"kind": "conv2d", "in_channels": 4, "out_channels": 4, "stride": 1, "padding": 1},
            {"kind": "activation", "activation": "relu"},
            {"kind": "global_avg_pool"},
            {"kind": "fully_connected", "in_dim": 4, "out_dim": 3},
        ],
        "seed": 2,
    })
