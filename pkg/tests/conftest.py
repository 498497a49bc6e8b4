"""Shared fixtures: small model configurations and synthetic task data."""

import numpy as np
import pytest

from metaqf.model import ModelConfig
from metaqf.tasks import ForecastTask, build_dataset, synthetic_bundle


@pytest.fixture
def tiny_cfg():
    """One layer, hidden size differs from feature count (residual projection)."""
    return ModelConfig(num_layers=1, hidden_size=4, input_feature_count=3,
                       quantiles=(0.1, 0.5, 0.9), lag_steps=4)


@pytest.fixture
def two_layer_cfg():
    return ModelConfig(num_layers=2, hidden_size=3, input_feature_count=3,
                       quantiles=(0.1, 0.5, 0.9), lag_steps=4)


@pytest.fixture
def small_bundle():
    return synthetic_bundle(2, 500, seed=7)


@pytest.fixture
def two_task_data(small_bundle, tiny_cfg):
    tasks = [ForecastTask("loc0_t3", "loc0", 3), ForecastTask("loc1_t6", "loc1", 6)]
    return {t.task_id: build_dataset(small_bundle, t, tiny_cfg.lag_steps) for t in tasks}


def random_params_like(config: ModelConfig, seed: int, scale: float = 0.3):
    """Random dense parameters for a config (independent of init_params)."""
    from metaqf.model import segment_shapes
    from metaqf.params import ParameterVector
    rng = np.random.default_rng(seed)
    return ParameterVector({name: rng.normal(0.0, scale, size=shape)
                            for name, shape in segment_shapes(config).items()})
