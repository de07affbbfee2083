"""共享 fixtures：小尺寸预测器配置、随机参数与样本"""
import numpy as np
import pytest

from src.core.config import PredictorConfig, SynthConfig, TrainConfig
from src.motion.predictor import init_params
from src.motion.skeleton_data import PoseSequence, SamplePair, synth_generate, window_split


@pytest.fixture
def tiny_cfg() -> PredictorConfig:
    return PredictorConfig(
        n_dct_coeffs=7,
        hidden_dim=8,
        n_blocks=1,
        joints=2,
        t_obs=4,
        t_future=3,
        feature_scale_mm=10.0,
        seed=3,
    )


@pytest.fixture
def random_params(tiny_cfg):
    """所有参数（含头部）随机扰动，保证每条梯度路径都被激活"""
    rng = np.random.default_rng(11)
    return {name: rng.normal(0.0, 0.3, size=p.shape) for name, p in init_params(tiny_cfg).items()}


@pytest.fixture
def tiny_pair(tiny_cfg) -> SamplePair:
    rng = np.random.default_rng(5)
    observed = PoseSequence(rng.normal(0.0, 10.0, size=(tiny_cfg.t_obs, tiny_cfg.joints, 3)))
    future = PoseSequence(rng.normal(0.0, 10.0, size=(tiny_cfg.t_future, tiny_cfg.joints, 3)))
    return SamplePair(observed=observed, future=future, source_id="rand")


@pytest.fixture
def small_pairs(tiny_cfg):
    synth = SynthConfig(
        joints=2,
        duration_frames=40,
        base_frequencies=[0.5, 0.8],
        amplitude_mm=[100.0, 60.0],
        noise_floor_mm=1.0,
        seed=0,
    )
    return window_split(synth_generate(synth), tiny_cfg.t_obs, tiny_cfg.seq_len, stride=2, source_id="synth")


@pytest.fixture
def fast_train_cfg() -> TrainConfig:
    return TrainConfig(lr=1e-2, batch_size=4, epochs=2, seed=7)
