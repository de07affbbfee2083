"""
预测网络测试：DCT 恒等式、编码、零网络残差、方差边界、反向传播与有限差分一致
"""
import numpy as np
import pytest

from src.core.config import LossMode, PredictorConfig
from src.core.exceptions import ArgumentError, NumericError, ShapeError
from src.motion.losses import loss_gradients, sequence_nll, total_loss
from src.motion.predictor import (
    backward,
    dct_forward,
    dct_inverse,
    dct_matrix,
    dct_truncate,
    decode_trajectory,
    forward,
    forward_with_cache,
    head_report,
    init_params,
    pad_and_encode,
    pad_observed,
    param_count,
    param_shapes,
)
from src.motion.skeleton_data import PoseSequence

FD_STEP = 1e-5


def _static(cfg: PredictorConfig, pose=None) -> PoseSequence:
    pose = np.arange(cfg.joints * 3, dtype=float).reshape(cfg.joints, 3) if pose is None else pose
    return PoseSequence(np.repeat(pose[None], cfg.t_obs, axis=0))


class TestDCT:
    def test_constant_series(self):
        coeffs = dct_forward(np.full(8, 2.5))
        assert coeffs[0] == pytest.approx(2.5 * np.sqrt(8), rel=1e-12)
        np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-12)

    def test_round_trip_and_parseval(self):
        rng = np.random.default_rng(0)
        for length in (1, 5, 20, 33):
            x = rng.normal(size=length)
            c = dct_forward(x)
            np.testing.assert_allclose(dct_inverse(c), x, atol=1e-9)
            assert np.sum(c ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-9)

    def test_matrix_is_orthonormal(self):
        D = dct_matrix(12)
        np.testing.assert_allclose(D @ D.T, np.eye(12), atol=1e-12)
        np.testing.assert_allclose(D @ np.arange(12.0), dct_forward(np.arange(12.0)), atol=1e-12)

    def test_truncate_keeps_low_frequencies(self):
        c = dct_forward(np.arange(10.0))
        np.testing.assert_array_equal(dct_truncate(c, 3), c[:3])
        with pytest.raises(ArgumentError):
            dct_truncate(c, 0)
        with pytest.raises(ArgumentError):
            dct_truncate(c, 11)

    def test_inverse_zero_pads_truncated_coefficients(self):
        c = dct_forward(np.arange(10.0))
        np.testing.assert_allclose(dct_inverse(c[:4], 10), dct_matrix(10)[:4].T @ c[:4], atol=1e-12)


class TestEncoding:
    def test_padding_repeats_last_frame(self, tiny_cfg, tiny_pair):
        padded = pad_observed(tiny_pair.observed, tiny_cfg)
        assert padded.shape == (tiny_cfg.seq_len, tiny_cfg.joints, 3)
        np.testing.assert_array_equal(padded[:tiny_cfg.t_obs], tiny_pair.observed.coords)
        for t in range(tiny_cfg.t_obs, tiny_cfg.seq_len):
            np.testing.assert_array_equal(padded[t], tiny_pair.observed.coords[-1])

    def test_static_pose_only_has_dc(self, tiny_cfg):
        features = pad_and_encode(_static(tiny_cfg), tiny_cfg)
        assert features.shape == (tiny_cfg.channels, tiny_cfg.n_dct_coeffs)
        np.testing.assert_allclose(features[:, 1:], 0.0, atol=1e-9)

    def test_no_future_encodes_raw_series(self):
        cfg = PredictorConfig(n_dct_coeffs=5, joints=1, t_obs=5, t_future=0)
        rng = np.random.default_rng(1)
        observed = PoseSequence(rng.normal(size=(5, 1, 3)))
        features = pad_and_encode(observed, cfg)
        expected = np.stack([dct_forward(observed.coords[:, 0, axis]) for axis in range(3)])
        np.testing.assert_allclose(features, expected, atol=1e-12)

    def test_full_length_truncation_is_lossless(self, tiny_cfg, tiny_pair):
        cfg = tiny_cfg.model_copy(update={"n_dct_coeffs": tiny_cfg.seq_len})
        decoded = decode_trajectory(pad_and_encode(tiny_pair.observed, cfg), cfg)
        np.testing.assert_allclose(decoded, pad_observed(tiny_pair.observed, cfg), atol=1e-9)

    def test_length_mismatch(self, tiny_cfg):
        with pytest.raises(ArgumentError):
            pad_and_encode(PoseSequence(np.zeros((tiny_cfg.t_obs + 1, tiny_cfg.joints, 3))), tiny_cfg)


class TestForward:
    def test_zero_network_is_persistence(self, tiny_cfg, tiny_pair):
        params = {name: np.zeros(shape) for name, shape in param_shapes(tiny_cfg).items()}
        pred = forward(params, tiny_pair.observed, tiny_cfg)
        expected = np.repeat(tiny_pair.observed.coords[-1:], tiny_cfg.t_future, axis=0)
        np.testing.assert_allclose(pred.mean, expected, atol=1e-9)
        np.testing.assert_array_equal(pred.var, 1.0)

    def test_init_is_persistence_with_unit_variance(self, tiny_cfg, tiny_pair):
        pred = forward(init_params(tiny_cfg), tiny_pair.observed, tiny_cfg)
        expected = np.repeat(tiny_pair.observed.coords[-1:], tiny_cfg.t_future, axis=0)
        np.testing.assert_allclose(pred.mean, expected, atol=1e-9)
        np.testing.assert_array_equal(pred.var, 1.0)

    def test_static_pose_has_zero_error(self, tiny_cfg):
        params = {name: np.zeros(shape) for name, shape in param_shapes(tiny_cfg).items()}
        observed = _static(tiny_cfg)
        pred = forward(params, observed, tiny_cfg)
        np.testing.assert_allclose(pred.mean, observed.coords[:tiny_cfg.t_future], atol=1e-9)

    def test_output_shape_and_purity(self, tiny_cfg, random_params, tiny_pair):
        a = forward(random_params, tiny_pair.observed, tiny_cfg)
        b = forward(random_params, tiny_pair.observed, tiny_cfg)
        assert a.mean.shape == a.var.shape == (tiny_cfg.t_future, tiny_cfg.joints, 3)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)

    def test_variance_stays_within_bounds(self, tiny_cfg, random_params, tiny_pair):
        cfg = tiny_cfg.model_copy(update={"var_min": 0.5, "var_max": 2.0})
        params = dict(random_params)
        params["head.var_bias"] = np.linspace(-10.0, 10.0, params["head.var_bias"].size).reshape(
            params["head.var_bias"].shape
        )
        pred = forward(params, tiny_pair.observed, cfg)
        assert pred.var.min() >= 0.5 * (1 - 1e-12)
        assert pred.var.max() <= 2.0 * (1 + 1e-12)

    def test_non_finite_activation_names_layer(self, tiny_cfg, random_params, tiny_pair):
        params = dict(random_params)
        params["block0.bias"] = np.full_like(params["block0.bias"], np.nan)
        with pytest.raises(NumericError) as info:
            forward(params, tiny_pair.observed, tiny_cfg)
        assert info.value.layer == 1

    def test_missing_parameter(self, tiny_cfg, random_params, tiny_pair):
        params = dict(random_params)
        del params["head.adj"]
        with pytest.raises(ShapeError):
            forward(params, tiny_pair.observed, tiny_cfg)


class TestInit:
    def test_same_seed_same_params(self, tiny_cfg):
        a, b = init_params(tiny_cfg), init_params(tiny_cfg)
        assert all(np.array_equal(a[n], b[n]) for n in a)

    def test_zero_scale_is_zero_network(self, tiny_cfg):
        params = init_params(tiny_cfg.model_copy(update={"init_scale": 0.0}))
        assert all(not np.any(p) for p in params.values())

    def test_bounds(self, tiny_cfg):
        params = init_params(tiny_cfg)
        bound = 1.0 / np.sqrt(tiny_cfg.hidden_dim)
        assert np.abs(params["block0.weight"]).max() <= bound

    def test_head_report(self, tiny_cfg):
        report = head_report(tiny_cfg)
        assert report["added_head_outputs"] == tiny_cfg.joints * 3 * tiny_cfg.t_future
        assert report["gaussian_head_outputs"] == 2 * report["mean_only_head_outputs"]
        assert report["added_head_params"] > 0
        assert param_count(init_params(tiny_cfg)) == sum(int(np.prod(s)) for s in param_shapes(tiny_cfg).values())


def _objective(params, pair, cfg, mode):
    pred = forward(params, pair.observed, cfg)
    if mode is LossMode.NLL_ONLY:
        return sequence_nll(pred, pair.future)
    return total_loss(pred, pair.future, k=0.0).total


class TestBackward:
    @pytest.mark.parametrize("mode", [LossMode.NLL_ONLY, LossMode.UA_FULL])
    def test_matches_finite_differences(self, tiny_cfg, random_params, tiny_pair, mode):
        pred, cache = forward_with_cache(random_params, tiny_pair.observed, tiny_cfg)
        # k=0：w ≡ 1，解析梯度即目标函数的完整梯度
        upstream = loss_gradients(pred, tiny_pair.future, k=0.0, mode=mode)
        grads = backward(random_params, cache, upstream.d_mu, upstream.d_log_var)
        assert list(grads) == list(param_shapes(tiny_cfg))

        for name, value in random_params.items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                plus = {**random_params, name: value.copy()}
                minus = {**random_params, name: value.copy()}
                plus[name][idx] += FD_STEP
                minus[name][idx] -= FD_STEP
                numeric[idx] = (
                    _objective(plus, tiny_pair, tiny_cfg, mode) - _objective(minus, tiny_pair, tiny_cfg, mode)
                ) / (2.0 * FD_STEP)
            np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-5, err_msg=name)

    def test_scaled_var_bias_matches_finite_differences(self, tiny_cfg, random_params, tiny_pair):
        cfg = tiny_cfg.model_copy(update={"var_bias_scale": 20.0})
        params = {**random_params, "head.var_bias": random_params["head.var_bias"] * 0.05}
        pred, cache = forward_with_cache(params, tiny_pair.observed, cfg)
        upstream = loss_gradients(pred, tiny_pair.future, k=0.0, mode=LossMode.NLL_ONLY)
        grads = backward(params, cache, upstream.d_mu, upstream.d_log_var)

        value = params["head.var_bias"]
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus, minus = value.copy(), value.copy()
            plus[idx] += FD_STEP
            minus[idx] -= FD_STEP
            numeric[idx] = (
                _objective({**params, "head.var_bias": plus}, tiny_pair, cfg, LossMode.NLL_ONLY)
                - _objective({**params, "head.var_bias": minus}, tiny_pair, cfg, LossMode.NLL_ONLY)
            ) / (2.0 * FD_STEP)
        np.testing.assert_allclose(grads["head.var_bias"], numeric, rtol=1e-4, atol=1e-5)

    def test_scaled_var_bias_keeps_unit_initial_variance(self, tiny_cfg, tiny_pair):
        cfg = tiny_cfg.model_copy(update={"var_bias_scale": 20.0})
        pred = forward(init_params(cfg), tiny_pair.observed, cfg)
        np.testing.assert_array_equal(pred.var, np.ones_like(pred.var))

    def test_zero_upstream_gives_zero_grads(self, tiny_cfg, random_params, tiny_pair):
        _, cache = forward_with_cache(random_params, tiny_pair.observed, tiny_cfg)
        shape = (tiny_cfg.t_future, tiny_cfg.joints, 3)
        grads = backward(random_params, cache, np.zeros(shape), np.zeros(shape))
        assert all(not np.any(g) for g in grads.values())

    def test_clamped_variance_has_no_gradient(self, tiny_cfg, random_params, tiny_pair):
        params = dict(random_params)
        params["head.var_bias"] = params["head.var_bias"].copy()
        params["head.var_bias"][0, 0] = 100.0  # exp(100) > var_max
        pred, cache = forward_with_cache(params, tiny_pair.observed, tiny_cfg)
        assert pred.var[0, 0, 0] == pytest.approx(tiny_cfg.var_max, rel=1e-12)
        upstream = loss_gradients(pred, tiny_pair.future, mode=LossMode.NLL_ONLY)
        grads = backward(params, cache, upstream.d_mu, upstream.d_log_var)
        assert grads["head.var_bias"][0, 0] == 0.0
        assert grads["head.var_bias"][0, 1] != 0.0

    def test_upstream_shape_mismatch(self, tiny_cfg, random_params, tiny_pair):
        _, cache = forward_with_cache(random_params, tiny_pair.observed, tiny_cfg)
        with pytest.raises(ArgumentError):
            backward(random_params, cache, np.zeros((1, 1, 3)), np.zeros((1, 1, 3)))
