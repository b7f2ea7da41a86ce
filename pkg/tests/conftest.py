"""Shared fixtures for the FedAlign test suite."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.data import PartitionSpec, gen_blobs, partition_dirichlet  # noqa: E402
from core.federation import TrainConfig  # noqa: E402
from core.nn import Activation, init_model  # noqa: E402
from core.performance_logger import logger  # noqa: E402
from core.seeding import stream  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run experiment-scale directional checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: experiment-scale check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.reset()
    logger.set_quiet_mode(True)
    yield
    logger.set_quiet_mode(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return init_model([4, 6, 5, 3], Activation.TANH, stream(7, "init"))


@pytest.fixture
def blobs():
    return gen_blobs(classes=3, dim=4, per_class=20, spread=0.8, seed=3)


@pytest.fixture
def shards(blobs):
    return partition_dirichlet(blobs, PartitionSpec(3, 1.0, seed=3, redraw_empty=True)).shards


@pytest.fixture
def train_cfg():
    return TrainConfig(rounds=3, local_epochs=1, lr=0.1, batch_size=8, seed=5, workers=1)


def write_settings(path: Path, config: dict) -> Path:
    """JSON run configuration for command-level tests."""
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def tiny_config():
    return {
        "seed": 0,
        "workers": 1,
        "model": {"hidden": [6]},
        "dataset": {"kind": "blobs", "classes": 3, "dim": 4, "per_class": 15, "test_fraction": 0.2},
        "partition": {"n_clients": 3, "beta": 1.0, "redraw_empty": True},
        "train": {"rounds": 2, "lr": 0.1, "batch_size": 8, "backward_mode": "flfa"},
        "metrics": {"record_updates": True},
    }
