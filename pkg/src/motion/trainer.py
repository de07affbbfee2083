"""
训练器：Adam + 梯度裁剪 + 指数学习率衰减 + 最优验证集检查点 + 可选提前停止

单线程逐步迭代；小批量内按样本下标顺序累加梯度，保证 (cfg, data, seed) 完全可复现。
最优验证 epoch 的参数快照随 last 检查点一起保存，续训得到的 best 与不间断训练逐字节相同。
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import structlog

from ..core.config import LossMode, PredictorConfig, TrainConfig
from ..core.exceptions import ArgumentError, ArtifactIOError, NumericError, TrainingDivergedError
from .checkpoint import ModelCheckpoint
from .losses import LossBreakdown, batch_breakdown, joint_weights, loss_gradients, mpjpe, total_loss
from .predictor import ModelParams, backward, forward, forward_with_cache, init_params
from .skeleton_data import SamplePair

logger = structlog.get_logger(__name__)


def _copy(arrays: ModelParams) -> ModelParams:
    return {name: np.array(arr, copy=True) for name, arr in arrays.items()}


@dataclass
class TrainState:
    params: ModelParams
    adam_m: ModelParams
    adam_v: ModelParams
    step: int = 0
    epoch: int = 0
    best_val_mpjpe: float = math.inf
    stale_epochs: int = 0  # 自上次验证改善以来的 epoch 数
    best_params: ModelParams = field(default_factory=dict)
    best_step: int = 0
    best_epoch: int = 0

    def __post_init__(self) -> None:
        for group in (self.adam_m, self.adam_v):
            for name, arr in self.params.items():
                if name not in group or group[name].shape != arr.shape:
                    raise ArgumentError("optimizer moments are not congruent with params", context={"name": name})

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        return cls(
            params=_copy(params),
            adam_m={n: np.zeros_like(p) for n, p in params.items()},
            adam_v={n: np.zeros_like(p) for n, p in params.items()},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "TrainState":
        if not ckpt.adam_m:
            state = cls.fresh(ckpt.params)
        else:
            state = cls(_copy(ckpt.params), _copy(ckpt.adam_m), _copy(ckpt.adam_v))
        state.step, state.epoch, state.best_val_mpjpe = ckpt.step, ckpt.epoch, ckpt.best_val_mpjpe
        state.stale_epochs = ckpt.stale_epochs
        if ckpt.best_params:
            state.best_params = _copy(ckpt.best_params)
            state.best_step, state.best_epoch = ckpt.best_step, ckpt.best_epoch
        elif math.isfinite(ckpt.best_val_mpjpe):
            # 无快照的检查点：其参数是唯一与 best_val_mpjpe 对应的候选
            state.best_params, state.best_step, state.best_epoch = _copy(ckpt.params), ckpt.step, ckpt.epoch
        return state

    def to_checkpoint(self, predictor_cfg: PredictorConfig, train_cfg: Optional[TrainConfig]) -> ModelCheckpoint:
        return ModelCheckpoint(
            params=_copy(self.params),
            adam_m=_copy(self.adam_m),
            adam_v=_copy(self.adam_v),
            predictor_cfg=predictor_cfg,
            train_cfg=train_cfg,
            step=self.step,
            epoch=self.epoch,
            best_val_mpjpe=self.best_val_mpjpe,
            stale_epochs=self.stale_epochs,
            best_params=_copy(self.best_params),
            best_step=self.best_step,
            best_epoch=self.best_epoch,
        )

    def mark_best(self, val_mpjpe: float) -> None:
        self.best_val_mpjpe = val_mpjpe
        self.stale_epochs = 0
        self.best_params, self.best_step, self.best_epoch = _copy(self.params), self.step, self.epoch

    def best_checkpoint(self, predictor_cfg: PredictorConfig, train_cfg: Optional[TrainConfig]) -> ModelCheckpoint:
        """最优验证 epoch 的参数（不含优化器状态）；尚无验证记录时为当前参数"""
        params, step, epoch = self.best_params, self.best_step, self.best_epoch
        if not params:
            params, step, epoch = self.params, self.step, self.epoch
        return ModelCheckpoint(
            params=_copy(params),
            predictor_cfg=predictor_cfg,
            train_cfg=train_cfg,
            step=step,
            epoch=epoch,
            best_val_mpjpe=self.best_val_mpjpe,
        )


@dataclass
class TrainResult:
    best: ModelCheckpoint
    last: ModelCheckpoint
    metrics: List[Dict[str, Any]] = field(default_factory=list)


# ----------------------------------------------------------------------
# 优化器
# ----------------------------------------------------------------------

def _non_finite(grads: ModelParams) -> List[str]:
    return [name for name, g in grads.items() if not np.all(np.isfinite(g))]


def clip_grad_norm(grads: ModelParams, max_norm: Optional[float]) -> tuple[ModelParams, float]:
    """按全局 L2 范数裁剪，返回 (裁剪后梯度, 裁剪前范数)"""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or not math.isfinite(total) or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


def adam_step(
    state: TrainState,
    grads: ModelParams,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """带偏差修正的 Adam 更新；返回新状态，不修改入参"""
    bad = _non_finite(grads)
    if bad:
        raise TrainingDivergedError(
            "non-finite gradient",
            context={"tensors": bad, "step": state.step},
        )
    step = state.step + 1
    params, adam_m, adam_v = {}, {}, {}
    for name, p in state.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ArgumentError("gradient shape mismatch", context={"name": name, "param": p.shape, "grad": g.shape})
        m = beta1 * state.adam_m[name] + (1.0 - beta1) * g
        v = beta2 * state.adam_v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        adam_m[name], adam_v[name] = m, v
    return replace(state, params=params, adam_m=adam_m, adam_v=adam_v, step=step)


# ----------------------------------------------------------------------
# 训练循环
# ----------------------------------------------------------------------

def sample_gradients(
    params: ModelParams,
    pair: SamplePair,
    predictor_cfg: PredictorConfig,
    k: float,
    mode: LossMode,
) -> tuple[LossBreakdown, ModelParams]:
    """单样本：前向 → 损失 → 解析梯度 → 反向"""
    pred, cache = forward_with_cache(params, pair.observed, predictor_cfg)
    breakdown = total_loss(pred, pair.future, k)
    grads = loss_gradients(pred, pair.future, k, mode)
    return breakdown, backward(params, cache, grads.d_mu, grads.d_log_var)


def _epoch_measurements(
    params: ModelParams,
    predictor_cfg: PredictorConfig,
    train_pairs: Sequence[SamplePair],
    val_pairs: Sequence[SamplePair],
    k: float,
) -> Dict[str, Any]:
    """验证集 MPJPE、逐帧平均方差、干净/污染样本的平均惩罚权重"""
    measured = val_pairs if val_pairs else train_pairs
    errors, var_rows = [], []
    for pair in measured:
        pred = forward(params, pair.observed, predictor_cfg)
        errors.append(mpjpe(pred.mean, pair.future))
        var_rows.append(pred.var.mean(axis=(1, 2)))

    w_clean, w_corrupted = [], []
    for pair in train_pairs:
        pred = forward(params, pair.observed, predictor_cfg)
        (w_corrupted if pair.corrupted else w_clean).append(float(joint_weights(pred, k).mean()))

    return {
        "val_mpjpe_mm": float(np.mean(errors)),
        "mean_var_by_frame": [float(v) for v in np.mean(var_rows, axis=0)],
        "mean_w_clean": float(np.mean(w_clean)) if w_clean else None,
        "mean_w_corrupted": float(np.mean(w_corrupted)) if w_corrupted else None,
    }


def train(
    cfg: TrainConfig,
    train_pairs: Sequence[SamplePair],
    val_pairs: Sequence[SamplePair],
    predictor_cfg: PredictorConfig,
    *,
    resume: Optional[ModelCheckpoint] = None,
    on_epoch: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> TrainResult:
    """按 loss_mode 训练，返回 (最优验证检查点, 最后检查点, 逐 epoch 指标)"""
    if not train_pairs:
        raise ArgumentError("training set is empty")
    mode = LossMode(cfg.loss_mode)
    state = TrainState.from_checkpoint(resume) if resume else TrainState.fresh(init_params(predictor_cfg))
    metrics: List[Dict[str, Any]] = []
    n = len(train_pairs)

    logger.info(
        "trainer.started",
        loss_mode=mode.value,
        samples=n,
        val_samples=len(val_pairs),
        epochs=cfg.epochs,
        start_epoch=state.epoch,
    )

    for epoch in range(state.epoch, cfg.epochs):
        lr = cfg.lr * cfg.lr_decay_per_epoch ** epoch
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        breakdowns: List[LossBreakdown] = []

        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            summed: Optional[ModelParams] = None
            for idx in batch:
                try:
                    breakdown, grads = sample_gradients(state.params, train_pairs[idx], predictor_cfg, cfg.k, mode)
                except NumericError as exc:
                    raise TrainingDivergedError(
                        "forward pass diverged",
                        checkpoint=state.to_checkpoint(predictor_cfg, cfg),
                        context={"epoch": epoch, "step": state.step},
                        cause=exc,
                    )
                if not math.isfinite(breakdown.objective(mode)):
                    raise TrainingDivergedError(
                        "loss is not finite",
                        checkpoint=state.to_checkpoint(predictor_cfg, cfg),
                        context={"epoch": epoch, "step": state.step, "sample": int(idx)},
                    )
                breakdowns.append(breakdown)
                summed = grads if summed is None else {name: summed[name] + g for name, g in grads.items()}

            mean_grads = {name: g / len(batch) for name, g in summed.items()}
            clipped, grad_norm = clip_grad_norm(mean_grads, cfg.grad_clip_norm)
            try:
                state = adam_step(
                    state, clipped, lr,
                    beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
                )
            except TrainingDivergedError as exc:
                exc.checkpoint = state.to_checkpoint(predictor_cfg, cfg)
                exc.context.update({"epoch": epoch, "grad_norm": grad_norm})
                raise

        record: Dict[str, Any] = {
            "epoch": epoch + 1,
            "lr": lr,
            "step": state.step,
            "train": batch_breakdown(breakdowns),
        }
        record.update(_epoch_measurements(state.params, predictor_cfg, train_pairs, val_pairs, cfg.k))
        state.epoch = epoch + 1

        if record["val_mpjpe_mm"] < state.best_val_mpjpe:
            state.mark_best(record["val_mpjpe_mm"])
        else:
            state.stale_epochs += 1

        metrics.append(record)
        logger.info(
            "trainer.epoch_done",
            epoch=record["epoch"],
            total=record["train"]["total"],
            l_m=record["train"]["l_m"],
            val_mpjpe_mm=record["val_mpjpe_mm"],
        )
        if on_epoch:
            on_epoch(record)
        if cfg.early_stop_patience and state.stale_epochs >= cfg.early_stop_patience:
            logger.info("trainer.early_stopped", epoch=state.epoch, best_val_mpjpe=state.best_val_mpjpe)
            break

    best = state.best_checkpoint(predictor_cfg, cfg)
    last = state.to_checkpoint(predictor_cfg, cfg)
    logger.info("trainer.finished", epochs=state.epoch, best_val_mpjpe=state.best_val_mpjpe)
    return TrainResult(best=best, last=last, metrics=metrics)


def write_metrics_log(records: Sequence[Dict[str, Any]], path: str | Path) -> Path:
    """JSON-lines，每个 epoch 一行（键排序，便于逐字节比较）"""
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError("cannot write metrics log", context={"path": str(file_path)}, cause=exc)
    return file_path

