import pytest
import torch

from trajkin.data import synth_scene
from trajkin.losses import LossConfig
from trajkin.model import ModelConfig
from trajkin.training import TrainConfig


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(d_model=32, n_heads=4, d_ff=64, K=4, dropout=0.0)


@pytest.fixture
def tiny_train_cfg(tiny_model_cfg):
    return TrainConfig(model=tiny_model_cfg, loss=LossConfig(epsilon=0.02), batch_size=4, epochs=1)


@pytest.fixture
def small_batch():
    return [
        synth_scene("constant_velocity", n_agents=2, seed=0),
        synth_scene("turn", n_agents=3, seed=1),
    ]


@pytest.fixture(autouse=True)
def _default_dtype():
    torch.set_default_dtype(torch.float32)
    yield
