"""
不确定性感知损失

- 高斯负对数似然（密度形式 / 分解形式）与序列级 L_n^U
- MPJPE L_m、惩罚权重 w、加权 MPJPE L_m^U
- 总损失 L^U = L_m^U + L_n^U 及其解析梯度

约定：`var` 始终表示方差（mm²），不是标准差。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..core.config import LossMode
from ..core.exceptions import ArgumentError, LossDomainError
from .skeleton_data import PoseSequence

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_K = -0.2


@dataclass(frozen=True)
class GaussianPoseSequence:
    """逐坐标高斯参数：mean / var 形状均为 (frames, joints, 3)"""

    mean: np.ndarray
    var: np.ndarray
    frame_interval_ms: float = 40.0

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=np.float64, copy=True)
        var = np.array(self.var, dtype=np.float64, copy=True)
        if mean.ndim != 3 or mean.shape[2] != 3 or mean.shape != var.shape:
            raise ArgumentError(
                "gaussian sequence needs mean and var of equal shape (frames, joints, 3)",
                context={"mean": mean.shape, "var": var.shape},
            )
        if not np.all(np.isfinite(mean)):
            raise LossDomainError("gaussian means must be finite")
        if not (np.all(np.isfinite(var)) and np.all(var > 0)):
            raise LossDomainError("gaussian variances must be finite and positive")
        mean.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @classmethod
    def from_raw(cls, mean: np.ndarray, raw: np.ndarray, var_min: float, var_max: float,
                 frame_interval_ms: float = 40.0) -> "GaussianPoseSequence":
        """var = exp(clip(raw, log var_min, log var_max))"""
        var = np.exp(np.clip(raw, math.log(var_min), math.log(var_max)))
        return cls(mean, var, frame_interval_ms)

    @property
    def frames(self) -> int:
        return self.mean.shape[0]

    @property
    def joints(self) -> int:
        return self.mean.shape[1]


@dataclass(frozen=True)
class NLLTerms:
    """分解形式的三项：回归项 / 方差正则项 / 常数项"""

    regression: Any
    regularization: Any
    constant: float = HALF_LOG_2PI

    @property
    def value(self) -> Any:
        return self.regularization + self.regression + self.constant


@dataclass(frozen=True)
class LossBreakdown:
    l_m: float
    l_m_weighted: float
    l_n: float
    total: float
    per_sample_weights: np.ndarray

    def to_dict(self) -> Dict[str, float]:
        return {
            "l_m": self.l_m,
            "l_m_weighted": self.l_m_weighted,
            "l_n": self.l_n,
            "total": self.total,
        }

    def objective(self, mode: LossMode) -> float:
        """当前训练模式实际优化的标量"""
        mode = LossMode(mode)
        if mode is LossMode.MPJPE_ONLY:
            return self.l_m
        if mode is LossMode.NLL_ONLY:
            return self.l_n
        return self.total


@dataclass(frozen=True)
class LossGradients:
    """对均值、方差以及原始对数方差参数的梯度，形状均为 (frames, joints, 3)"""

    d_mu: np.ndarray
    d_var: np.ndarray
    d_log_var: np.ndarray


def _scalar_or_array(value: np.ndarray) -> Any:
    return float(value) if np.ndim(value) == 0 else value


def _check_var(var: Any) -> np.ndarray:
    arr = np.asarray(var, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise LossDomainError("variance must be strictly positive")
    return arr


def _coords(x: Any) -> np.ndarray:
    if isinstance(x, PoseSequence):
        return x.coords
    if isinstance(x, GaussianPoseSequence):
        return x.mean
    return np.asarray(x, dtype=np.float64)


def _check_shapes(pred: np.ndarray, truth: np.ndarray) -> Tuple[int, int]:
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise ArgumentError("prediction and truth shapes differ", context={"pred": pred.shape, "truth": truth.shape})
    return pred.shape[0], pred.shape[1]


# ----------------------------------------------------------------------
# 逐坐标 NLL
# ----------------------------------------------------------------------

def nll_density(x: Any, mu: Any, var: Any) -> Any:
    """−log N(x | mu, var)，在对数空间计算"""
    v = _check_var(var)
    r = (np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) ** 2
    return _scalar_or_array(0.5 * np.log(2.0 * math.pi * v) + r / (2.0 * v))


def nll_decomposed(x: Any, mu: Any, var: Any) -> NLLTerms:
    """½(log var + (x−mu)²/var) + ½ log 2π，各项可单独取出"""
    v = _check_var(var)
    r = (np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) ** 2
    return NLLTerms(
        regression=_scalar_or_array(0.5 * r / v),
        regularization=_scalar_or_array(0.5 * np.log(v)),
    )


def nll_var_grad(x: Any, mu: Any, var: Any) -> Any:
    """∂nll/∂var = (var − r) / (2 var²)，在 var = r 处精确为 0"""
    v = _check_var(var)
    r = (np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) ** 2
    return _scalar_or_array((v - r) / (2.0 * v * v))


def nll_var_curvature(x: Any, mu: Any, var: Any) -> Any:
    """∂²nll/∂var² = (2r − var) / (2 var³)"""
    v = _check_var(var)
    r = (np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) ** 2
    return _scalar_or_array((2.0 * r - v) / (2.0 * v ** 3))


# ----------------------------------------------------------------------
# 序列级损失
# ----------------------------------------------------------------------

def sequence_nll(pred: GaussianPoseSequence, truth: PoseSequence | np.ndarray) -> float:
    """L_n^U：三轴 NLL 之和在帧与关节上取平均（除以 N·(T_f−T)）"""
    target = _coords(truth)
    frames, joints = _check_shapes(pred.mean, target)
    per_coord = nll_density(target, pred.mean, pred.var)
    return float(np.sum(per_coord) / (frames * joints))


def joint_errors(pred_means: Any, truth: Any) -> np.ndarray:
    """逐帧逐关节欧氏误差 (frames, joints)"""
    p, t = _coords(pred_means), _coords(truth)
    _check_shapes(p, t)
    return np.linalg.norm(p - t, axis=-1)


def mpjpe(pred_means: Any, truth: Any) -> float:
    errors = joint_errors(pred_means, truth)
    return float(np.sum(errors) / errors.size)


def penalty_weight(var_x: Any, var_y: Any, var_z: Any, k: float = DEFAULT_K) -> Any:
    """w = (var_x^k + var_y^k + var_z^k) / 3；k<0 时方差越大权重越小"""
    vx, vy, vz = _check_var(var_x), _check_var(var_y), _check_var(var_z)
    return _scalar_or_array((np.power(vx, k) + np.power(vy, k) + np.power(vz, k)) / 3.0)


def joint_weights(pred: GaussianPoseSequence, k: float = DEFAULT_K) -> np.ndarray:
    return np.asarray(penalty_weight(pred.var[..., 0], pred.var[..., 1], pred.var[..., 2], k))


def weighted_mpjpe(
    pred: GaussianPoseSequence,
    truth: PoseSequence | np.ndarray,
    k: float = DEFAULT_K,
) -> Tuple[float, np.ndarray]:
    """L_m^U 及逐帧逐关节权重矩阵；权重在求导时视为常数"""
    errors = joint_errors(pred.mean, truth)
    weights = joint_weights(pred, k)
    return float(np.sum(errors * weights) / errors.size), weights


def total_loss(
    pred: GaussianPoseSequence,
    truth: PoseSequence | np.ndarray,
    k: float = DEFAULT_K,
) -> LossBreakdown:
    l_m = mpjpe(pred.mean, truth)
    l_m_weighted, weights = weighted_mpjpe(pred, truth, k)
    l_n = sequence_nll(pred, truth)
    return LossBreakdown(
        l_m=l_m,
        l_m_weighted=l_m_weighted,
        l_n=l_n,
        total=l_m_weighted + l_n,
        per_sample_weights=weights,
    )


def loss_gradients(
    pred: GaussianPoseSequence,
    truth: PoseSequence | np.ndarray,
    k: float = DEFAULT_K,
    mode: LossMode = LossMode.UA_FULL,
) -> LossGradients:
    """所选训练目标对 mu / var / log-var 的解析梯度

    - NLL 部分：∂/∂mu = (mu−x)/var，∂/∂var = (var − r)/(2var²)
    - MPJPE 部分：w·(mu−p)/‖mu−p‖，零残差处次梯度取 0；w 不回传梯度
    """
    mode = LossMode(mode)
    target = _coords(truth)
    frames, joints = _check_shapes(pred.mean, target)
    norm = 1.0 / (frames * joints)
    diff = pred.mean - target
    var = pred.var

    d_mu = np.zeros_like(diff)
    d_var = np.zeros_like(diff)

    if mode in (LossMode.NLL_ONLY, LossMode.UA_FULL):
        d_mu += diff / var * norm
        d_var += (var - diff * diff) / (2.0 * var * var) * norm

    if mode in (LossMode.MPJPE_ONLY, LossMode.UA_FULL):
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        unit = np.divide(diff, dist, out=np.zeros_like(diff), where=dist > 0)
        weights = joint_weights(pred, k) if mode is LossMode.UA_FULL else np.ones((frames, joints))
        d_mu += weights[..., None] * unit * norm

    return LossGradients(d_mu=d_mu, d_var=d_var, d_log_var=var * d_var)


def batch_breakdown(items: list[LossBreakdown]) -> Optional[Dict[str, float]]:
    """小批量平均（按样本顺序求和）"""
    if not items:
        return None
    keys = ("l_m", "l_m_weighted", "l_n", "total")
    sums = {key: 0.0 for key in keys}
    for item in items:
        for key in keys:
            sums[key] += getattr(item, key)
    return {key: sums[key] / len(items) for key in keys}
