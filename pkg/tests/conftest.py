# tests/conftest.py

import numpy as np
import pytest

from database.ledger import RunLedger
from synth.datasets import DatasetRole, build_linear_dataset, build_scene_dataset
from synth.scenes import SceneConfig
from training.specs import ConsistencySpec, OptimizerSettings, TaskSpec
from tasks.linear import LinearModel

# Small frames keep the rendered scenes fast.
SMALL_SCENE = SceneConfig(height=16, width=16)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def ledger():
    """In-memory run ledger."""
    return RunLedger("sqlite://")


@pytest.fixture(scope="session")
def small_scene_config():
    return SMALL_SCENE


@pytest.fixture(scope="session")
def scene_pairs():
    """Four rendered frame pairs with every ground-truth field, as a mediator set."""
    return build_scene_dataset("pairs", 4, seed=7, config=SMALL_SCENE)


@pytest.fixture
def linear_specs():
    """
    Two linear toy tasks with their own dedicated targets plus an equality
    term on a shared unlabeled set.
    """
    left_data = build_linear_dataset("left", 4, seed=1, weights=[1.0, -2.0, 0.5], rows=8)
    right_data = build_linear_dataset("right", 4, seed=2, weights=[0.5, 1.0, -1.0], bias=0.5, rows=8)
    shared = build_linear_dataset("shared", 4, seed=3, weights=[0.0, 0.0, 0.0], rows=8, role=DatasetRole.MEDIATOR)
    tasks = [
        TaskSpec("left", LinearModel("left", n_samples=8), OptimizerSettings("sgd", 0.05), dataset=left_data, seed=11),
        TaskSpec("right", LinearModel("right", n_samples=8), OptimizerSettings("sgd", 0.05), dataset=right_data, seed=12),
    ]
    consistency = [ConsistencySpec.from_registry("agree", "equality", ["left", "right"], weight=1.0, dataset=shared)]
    return tasks, consistency
