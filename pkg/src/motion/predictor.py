"""
轨迹空间残差预测网络（LTD 风格的简化版）

流程：观测帧 → 末帧复制填充 → DCT 截断 → 图全连接层 (tanh, 残差块)
→ 高斯头（均值残差系数 + 对数方差系数）→ IDCT 回到逐帧坐标。

只有最后的头部比确定性预测器多出方差通道；前向/反向均为纯函数，
反向传播为手写的精确 reverse-mode 梯度。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List

import numpy as np
import scipy.fft
from ..core.config import PredictorConfig
from ..core.exceptions import ArgumentError, NumericError, ShapeError
from .losses import GaussianPoseSequence
from .skeleton_data import PoseSequence

ModelParams = Dict[str, np.ndarray]


# ----------------------------------------------------------------------
# DCT
# ----------------------------------------------------------------------

@lru_cache(maxsize=32)
def dct_matrix(length: int) -> np.ndarray:
    """正交 DCT-II 矩阵 D (L×L)：coeffs = D @ series"""
    if length < 1:
        raise ArgumentError("DCT length must be >= 1", context={"length": length})
    mat = scipy.fft.dct(np.eye(length), norm="ortho", axis=0)
    mat.flags.writeable = False
    return mat


def dct_forward(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < 1:
        raise ArgumentError("dct_forward expects a non-empty 1-D series", context={"shape": series.shape})
    return scipy.fft.dct(series, norm="ortho")


def dct_inverse(coeffs: np.ndarray, length: int | None = None) -> np.ndarray:
    """截断系数补零后做正交 IDCT"""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    length = coeffs.size if length is None else length
    if coeffs.size > length:
        raise ArgumentError("more coefficients than output length", context={"coeffs": coeffs.size, "length": length})
    full = np.zeros(length)
    full[:coeffs.size] = coeffs
    return scipy.fft.idct(full, norm="ortho")


def dct_truncate(coeffs: np.ndarray, m: int) -> np.ndarray:
    """保留最低频的 m 个系数"""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not 1 <= m <= coeffs.size:
        raise ArgumentError("truncation length must satisfy 1 <= m <= L", context={"m": m, "L": coeffs.size})
    return coeffs[:m].copy()


# ----------------------------------------------------------------------
# 输入编码
# ----------------------------------------------------------------------

def pad_observed(observed: PoseSequence, cfg: PredictorConfig) -> np.ndarray:
    """复制最后一个观测帧 t_future 次，得到 (t_obs + t_future, N, 3)"""
    if observed.frames != cfg.t_obs or observed.joints != cfg.joints:
        raise ArgumentError(
            "observed sequence does not match predictor dims",
            context={"frames": observed.frames, "t_obs": cfg.t_obs, "joints": observed.joints, "cfg_joints": cfg.joints},
        )
    tail = np.repeat(observed.coords[-1:], cfg.t_future, axis=0)
    return np.concatenate([observed.coords, tail], axis=0)


def pad_and_encode(observed: PoseSequence, cfg: PredictorConfig) -> np.ndarray:
    """特征矩阵 (3N, n_dct_coeffs)：每个关节-坐标通道的截断 DCT 系数"""
    padded = pad_observed(observed, cfg).reshape(cfg.seq_len, cfg.channels)
    basis = dct_matrix(cfg.seq_len)[:cfg.n_dct_coeffs]
    return (basis @ padded).T


def decode_trajectory(features: np.ndarray, cfg: PredictorConfig) -> np.ndarray:
    """pad_and_encode 的逆：(3N, m) → (t_obs + t_future, N, 3)"""
    basis = dct_matrix(cfg.seq_len)[:features.shape[1]]
    return (basis.T @ features.T).reshape(cfg.seq_len, cfg.joints, 3)


# ----------------------------------------------------------------------
# 参数
# ----------------------------------------------------------------------

def layer_names(cfg: PredictorConfig) -> List[str]:
    return ["input"] + [f"block{k}" for k in range(cfg.n_blocks)] + ["head"]


def param_shapes(cfg: PredictorConfig) -> Dict[str, tuple]:
    F, m, h = cfg.channels, cfg.n_dct_coeffs, cfg.hidden_dim
    shapes: Dict[str, tuple] = {
        "input.adj": (F, F),
        "input.weight": (m, h),
        "input.bias": (h,),
    }
    for k in range(cfg.n_blocks):
        shapes[f"block{k}.adj"] = (F, F)
        shapes[f"block{k}.weight"] = (h, h)
        shapes[f"block{k}.bias"] = (h,)
    shapes["head.adj"] = (F, F)
    shapes["head.weight"] = (h, 2 * m)
    shapes["head.bias"] = (2 * m,)
    shapes["head.var_bias"] = (cfg.t_future, F)
    return shapes


def init_params(cfg: PredictorConfig) -> ModelParams:
    """uniform(±init_scale/√fan_in) 初始化

    偏置与头部权重全为 0：未训练的网络恰为末帧保持基线，初始方差恰为 1 mm²。
    """
    rng = np.random.default_rng(cfg.seed)
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
            continue
        bound = cfg.init_scale / math.sqrt(shape[0])
        params[name] = rng.uniform(-bound, bound, size=shape)
    params["head.weight"][:] = 0.0
    return params


def param_count(params: ModelParams) -> int:
    return int(sum(p.size for p in params.values()))


def head_report(cfg: PredictorConfig) -> Dict[str, int]:
    """高斯头相对确定性头的增量（输出数与参数量）"""
    F, m, h = cfg.channels, cfg.n_dct_coeffs, cfg.hidden_dim
    mean_outputs = F * cfg.t_future
    mean_params = F * F + h * m + m
    gaussian_params = F * F + h * 2 * m + 2 * m + cfg.t_future * F
    return {
        "mean_only_head_outputs": mean_outputs,
        "gaussian_head_outputs": 2 * mean_outputs,
        "added_head_outputs": mean_outputs,
        "mean_only_head_params": mean_params,
        "gaussian_head_params": gaussian_params,
        "added_head_params": gaussian_params - mean_params,
    }


def _check_params(params: ModelParams, cfg: PredictorConfig) -> None:
    for name, shape in param_shapes(cfg).items():
        if name not in params or params[name].shape != shape:
            raise ShapeError(
                "parameter missing or misshapen",
                context={"name": name, "expected": shape, "got": getattr(params.get(name), "shape", None)},
            )


# ----------------------------------------------------------------------
# 前向 / 反向
# ----------------------------------------------------------------------

@dataclass
class LayerCache:
    inputs: np.ndarray   # H_in (F, d_in)
    mixed: np.ndarray    # A @ H_in
    outputs: np.ndarray  # tanh(Z)，头部为线性输出 Q


@dataclass
class ForwardCache:
    cfg: PredictorConfig
    padded: np.ndarray      # (L, F)
    layers: List[LayerCache]
    raw_log_var: np.ndarray  # (t_future, F)，clip 之前
    in_bounds: np.ndarray    # clip 未生效的位置


def _check_finite(values: np.ndarray, layer: int) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite activation", layer=layer)


def forward_with_cache(
    params: ModelParams,
    observed: PoseSequence,
    cfg: PredictorConfig,
) -> tuple[GaussianPoseSequence, ForwardCache]:
    _check_params(params, cfg)
    L, F, m = cfg.seq_len, cfg.channels, cfg.n_dct_coeffs
    scale = cfg.feature_scale_mm
    basis = dct_matrix(L)[:m]

    padded = pad_observed(observed, cfg).reshape(L, F)
    hidden = (basis @ padded).T / scale
    layers: List[LayerCache] = []

    for index, name in enumerate(layer_names(cfg)[:-1]):
        mixed = params[f"{name}.adj"] @ hidden
        activated = np.tanh(mixed @ params[f"{name}.weight"] + params[f"{name}.bias"])
        _check_finite(activated, index)
        layers.append(LayerCache(inputs=hidden, mixed=mixed, outputs=activated))
        hidden = activated if index == 0 else hidden + activated

    mixed = params["head.adj"] @ hidden
    head_out = mixed @ params["head.weight"] + params["head.bias"]
    _check_finite(head_out, len(layers))
    layers.append(LayerCache(inputs=hidden, mixed=mixed, outputs=head_out))

    future = slice(cfg.t_obs, L)
    mean_traj = basis.T @ (head_out[:, :m] * scale).T
    mean = padded[future] + mean_traj[future]
    raw = (basis.T @ head_out[:, m:].T)[future] + cfg.var_bias_scale * params["head.var_bias"]

    lo, hi = math.log(cfg.var_min), math.log(cfg.var_max)
    in_bounds = (raw >= lo) & (raw <= hi)
    shape = (cfg.t_future, cfg.joints, 3)
    pred = GaussianPoseSequence.from_raw(
        mean.reshape(shape), raw.reshape(shape), cfg.var_min, cfg.var_max, observed.frame_interval_ms
    )
    return pred, ForwardCache(cfg=cfg, padded=padded, layers=layers, raw_log_var=raw, in_bounds=in_bounds)


def forward(params: ModelParams, observed: PoseSequence, cfg: PredictorConfig) -> GaussianPoseSequence:
    pred, _ = forward_with_cache(params, observed, cfg)
    return pred


def backward(
    params: ModelParams,
    cache: ForwardCache,
    d_mu: np.ndarray,
    d_log_var: np.ndarray,
) -> ModelParams:
    """对所有参数的精确梯度；d_mu / d_log_var 是损失对均值与原始对数方差的梯度"""
    cfg = cache.cfg
    _check_params(params, cfg)
    expected = (cfg.t_future, cfg.joints, 3)
    if np.shape(d_mu) != expected or np.shape(d_log_var) != expected:
        raise ShapeError(
            "upstream gradient shape mismatch",
            context={"expected": expected, "d_mu": np.shape(d_mu), "d_log_var": np.shape(d_log_var)},
        )
    if len(cache.layers) != cfg.n_blocks + 2:
        raise ShapeError("forward cache does not match predictor config")

    L, F, m = cfg.seq_len, cfg.channels, cfg.n_dct_coeffs
    basis = dct_matrix(L)[:m]
    g_mean = np.asarray(d_mu, dtype=np.float64).reshape(cfg.t_future, F)
    g_raw = np.asarray(d_log_var, dtype=np.float64).reshape(cfg.t_future, F) * cache.in_bounds

    grads: ModelParams = {"head.var_bias": cfg.var_bias_scale * g_raw}

    g_traj = np.zeros((L, F))
    g_traj[cfg.t_obs:] = g_mean
    g_head = np.concatenate([
        (basis @ g_traj).T * cfg.feature_scale_mm,
        (basis[:, cfg.t_obs:] @ g_raw).T,
    ], axis=1)

    head = cache.layers[-1]
    grads["head.weight"] = head.mixed.T @ g_head
    grads["head.bias"] = g_head.sum(axis=0)
    g_mixed = g_head @ params["head.weight"].T
    grads["head.adj"] = g_mixed @ head.inputs.T
    g_hidden = params["head.adj"].T @ g_mixed

    names = layer_names(cfg)[:-1]
    for index in range(len(names) - 1, -1, -1):
        name, layer = names[index], cache.layers[index]
        g_pre = g_hidden * (1.0 - layer.outputs ** 2)
        grads[f"{name}.weight"] = layer.mixed.T @ g_pre
        grads[f"{name}.bias"] = g_pre.sum(axis=0)
        g_mixed = g_pre @ params[f"{name}.weight"].T
        grads[f"{name}.adj"] = g_mixed @ layer.inputs.T
        if index > 0:
            # 残差块：H_out = H_in + tanh(...)
            g_hidden = g_hidden + params[f"{name}.adj"].T @ g_mixed

    return {name: grads[name] for name in param_shapes(cfg)}
