"""
训练行为：在合成正弦数据上检查学习效果与不确定性质量（耗时较长，标记为 slow）
"""
import json
from pathlib import Path

import numpy as np
import pytest

from src.cli.commands import build_dataset
from src.cli.main import main
from src.core.config import LossMode, PredictorConfig, SynthConfig, TrainConfig, load_run_config
from src.motion.evaluation import (
    calibration_stats,
    horizon_trend,
    mean_uncertainty_map,
    persistence_params,
    predict_pairs,
    stack_predictions,
)
from src.motion.losses import mpjpe
from src.motion.skeleton_data import remove_root_translation, synth_generate, window_split
from src.motion.trainer import train

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"


def _mean_error(params, cfg, pairs):
    preds = predict_pairs(params, cfg, pairs)
    return float(np.mean([mpjpe(p.mean, pair.future) for p, pair in zip(preds, pairs)]))


class TestNoiselessSinusoids:
    """joints=2, t_obs=10, t_future=10, 200 个训练窗口，无噪声"""

    @pytest.fixture(scope="class")
    def predictor_cfg(self):
        return PredictorConfig(
            n_dct_coeffs=20, hidden_dim=16, n_blocks=1, joints=2, t_obs=10, t_future=10, var_bias_scale=20.0,
        )

    @pytest.fixture(scope="class")
    def data(self, predictor_cfg):
        synth = SynthConfig(
            joints=2, duration_frames=279, base_frequencies=[0.5, 0.8], amplitude_mm=[100.0, 60.0], seed=0,
        )
        seq = synth_generate(synth)
        split = predictor_cfg.seq_len - 1 + 200
        train_pairs = window_split(seq.slice(0, split), predictor_cfg.t_obs, predictor_cfg.seq_len, 1, "synth")
        val_pairs = window_split(seq.slice(split, seq.frames), predictor_cfg.t_obs, predictor_cfg.seq_len, 1, "synth")
        return [remove_root_translation(p) for p in train_pairs], [remove_root_translation(p) for p in val_pairs]

    @pytest.fixture(scope="class")
    def runs(self, predictor_cfg, data):
        train_pairs, val_pairs = data
        results = {}
        for mode in (LossMode.MPJPE_ONLY, LossMode.UA_FULL):
            cfg = TrainConfig(loss_mode=mode, lr=3e-3, batch_size=16, epochs=40, seed=0)
            results[mode] = train(cfg, train_pairs, val_pairs, predictor_cfg).last.params
        return results

    def test_window_count(self, data):
        assert len(data[0]) == 200

    def test_mpjpe_training_reaches_a_fifth_of_persistence(self, predictor_cfg, data, runs):
        train_pairs, _ = data
        trained = _mean_error(runs[LossMode.MPJPE_ONLY], predictor_cfg, train_pairs)
        baseline = _mean_error(persistence_params(predictor_cfg), predictor_cfg, train_pairs)
        assert trained < 0.2 * baseline

    def test_full_objective_stays_within_twice_mpjpe_only(self, predictor_cfg, data, runs):
        _, val_pairs = data
        full = _mean_error(runs[LossMode.UA_FULL], predictor_cfg, val_pairs)
        baseline = _mean_error(runs[LossMode.MPJPE_ONLY], predictor_cfg, val_pairs)
        assert full <= 2.0 * baseline


class TestGrowingNoise:
    """config/horizon_run.json：噪声随帧线性增长，ua_full，5 个种子"""

    @pytest.fixture(scope="class")
    def seeded_runs(self):
        base = load_run_config(CONFIG_DIR / "horizon_run.json")
        runs = []
        for seed in base.ablation.seeds:
            cfg = base.with_seed(seed)
            split = build_dataset(cfg)
            params = train(cfg.train, split.train, split.val, cfg.predictor).last.params
            preds = predict_pairs(params, cfg.predictor, split.val)
            truth = np.concatenate([pair.future.coords for pair in split.val])
            runs.append({
                "trend": horizon_trend(mean_uncertainty_map(preds)),
                "row_means": mean_uncertainty_map(preds).row_means,
                "calibration": calibration_stats(stack_predictions(preds), truth),
            })
        return runs

    def test_variance_grows_with_horizon(self, seeded_runs):
        trends = [run["trend"] for run in seeded_runs]
        assert None not in trends
        assert np.mean(trends) >= 0.8
        assert all(run["row_means"][-1] > run["row_means"][0] for run in seeded_runs)

    def test_one_sigma_coverage_is_calibrated(self, seeded_runs):
        coverage = np.mean([run["calibration"].coverage_1sigma for run in seeded_runs])
        assert 0.50 <= coverage <= 0.85

    def test_variance_tracks_squared_error(self, seeded_runs):
        pearson = [run["calibration"].pearson_var_vs_sqerr for run in seeded_runs]
        assert None not in pearson
        assert np.mean(pearson) > 0.3


class TestNoisySampleAblation:
    """config/ablation_run.json：25% 训练样本未来帧加 50 mm 噪声，同等训练预算，5 个种子"""

    @pytest.fixture(scope="class")
    def summary(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("ablation")
        assert main(["ablate", "--config", str(CONFIG_DIR / "ablation_run.json"), "--out", str(out)]) == 0
        return json.loads((out / "ablation.json").read_text())["summary"]

    def test_full_objective_matches_mpjpe_only_on_clean_validation(self, summary):
        full = summary["ua_full"]["val_mpjpe_mm"]
        baseline = summary["mpjpe_only"]["val_mpjpe_mm"]
        assert full <= 1.1 * baseline

    def test_corrupted_pairs_are_counted(self, summary):
        assert summary["ua_full"]["mean_w_corrupted"] is not None
        assert summary["ua_full"]["mean_w_clean"] is not None
