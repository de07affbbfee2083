"""
配置中心：环境设置 (Settings) + 运行配置模型 (RunConfig)

运行配置来自单个结构化文件（JSON，YAML 亦可），命令行用 dotted key 覆写。
"""
from __future__ import annotations

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigurationError


class Settings(BaseSettings):
    """进程级环境配置"""
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",  # 允许 .env 中未使用的键存在
    )

    APP_NAME: str = "UA-HMP (uncertainty-aware motion prediction)"
    APP_ENV: str = Field(default="development", pattern="^(development|production|test)$")
    DEBUG: bool = Field(default=False, description="True 时使用彩色控制台日志，否则输出 JSON")

    # 日志
    LOG_LEVEL: str = Field(default="INFO", pattern="^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$")
    LOG_DIR: str = Field(default="", description="日志文件目录，为空则不写入文件（仅stderr）")

    # 运行配置
    DEFAULT_RUN_CONFIG: str = Field(default="config/default_run.json", description="未指定 --config 时使用的运行配置")


class LossMode(str, Enum):
    """训练目标（含消融）"""
    MPJPE_ONLY = "mpjpe_only"
    NLL_ONLY = "nll_only"
    UA_FULL = "ua_full"


_FROZEN = ConfigDict(frozen=True, extra="forbid")


class SynthConfig(BaseModel):
    """合成正弦骨架数据的参数"""
    model_config = _FROZEN

    joints: int = Field(default=4, ge=1)
    duration_frames: int = Field(default=240, ge=1)
    base_frequencies: List[float] = Field(default_factory=lambda: [0.5, 0.7, 0.9, 1.1], description="每个关节的基频 (Hz)")
    amplitude_mm: List[float] = Field(default_factory=lambda: [100.0, 80.0, 120.0, 60.0])
    noise_floor_mm: float = Field(default=0.0, ge=0.0)
    noise_growth_per_frame: float = Field(default=0.0, ge=0.0)
    seed: int = 0
    frame_interval_ms: float = Field(default=40.0, gt=0.0)

    @model_validator(mode="after")
    def _per_joint_arrays(self) -> "SynthConfig":
        if len(self.base_frequencies) != self.joints or len(self.amplitude_mm) != self.joints:
            raise ValueError(
                f"base_frequencies/amplitude_mm need {self.joints} entries, "
                f"got {len(self.base_frequencies)}/{len(self.amplitude_mm)}"
            )
        return self


class DataConfig(BaseModel):
    """数据集切窗、划分与污染设置"""
    model_config = _FROZEN

    n_sequences: int = Field(default=4, ge=1)
    stride: int = Field(default=1, ge=1)
    val_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    center_root: bool = True
    corrupt_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    corrupt_noise_std_mm: float = Field(default=50.0, ge=0.0)
    corrupt_seed: int = 0
    frame_interval_ms: float = Field(default=40.0, gt=0.0)


class PredictorConfig(BaseModel):
    """轨迹空间残差预测网络的结构参数"""
    model_config = _FROZEN

    n_dct_coeffs: int = Field(default=20, ge=1)
    hidden_dim: int = Field(default=32, ge=1)
    n_blocks: int = Field(default=2, ge=1)
    joints: int = Field(default=4, ge=1)
    t_obs: int = Field(default=10, ge=1)
    t_future: int = Field(default=10, ge=0)
    init_scale: float = Field(default=1.0, ge=0.0)
    seed: int = 0
    feature_scale_mm: float = Field(default=1000.0, gt=0.0, description="DCT 特征进入网络前的归一化尺度")
    var_bias_scale: float = Field(default=1.0, gt=0.0, description="head.var_bias 进入对数方差前的乘子；Adam 每步约移动 lr·var_bias_scale 个 log 单位")
    var_min: float = Field(default=1e-6, gt=0.0)
    var_max: float = Field(default=1e6, gt=0.0)

    @model_validator(mode="after")
    def _dims(self) -> "PredictorConfig":
        if self.n_dct_coeffs > self.t_obs + self.t_future:
            raise ValueError("n_dct_coeffs must not exceed t_obs + t_future")
        if self.var_min > self.var_max:
            raise ValueError("var_min must not exceed var_max")
        return self

    @property
    def seq_len(self) -> int:
        return self.t_obs + self.t_future

    @property
    def channels(self) -> int:
        return 3 * self.joints


class TrainConfig(BaseModel):
    """优化器与训练循环参数"""
    model_config = _FROZEN

    loss_mode: LossMode = LossMode.UA_FULL
    k: float = Field(default=-0.2, description="惩罚权重温度系数")
    lr: float = Field(default=5e-4, gt=0.0)
    adam_beta1: float = Field(default=0.9, gt=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=50, ge=0)
    grad_clip_norm: Optional[float] = Field(default=1.0, gt=0.0)
    seed: int = 0
    lr_decay_per_epoch: float = Field(default=0.96, gt=0.0, le=1.0)
    early_stop_patience: Optional[int] = Field(default=None, ge=1, description="验证 MPJPE 连续多少个 epoch 未改善即停止；None 表示不提前停止")


class EvalConfig(BaseModel):
    """评估 horizon 设置"""
    model_config = _FROZEN

    horizons_ms: List[float] = Field(default_factory=lambda: [80.0, 160.0, 320.0, 400.0])
    eval_stride: int = Field(default=5, ge=1)


class PathsConfig(BaseModel):
    model_config = _FROZEN

    dataset_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    out_dir: str = "runs/default"


class AblationConfig(BaseModel):
    """噪声样本消融实验"""
    model_config = _FROZEN

    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    loss_modes: List[LossMode] = Field(default_factory=lambda: [LossMode.MPJPE_ONLY, LossMode.UA_FULL])


class RunConfig(BaseModel):
    """一次运行的完整配置"""
    model_config = _FROZEN

    synth: SynthConfig = Field(default_factory=SynthConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.synth.joints != self.predictor.joints:
            raise ValueError("synth.joints must equal predictor.joints")
        if self.synth.frame_interval_ms != self.data.frame_interval_ms:
            raise ValueError("synth.frame_interval_ms must equal data.frame_interval_ms")
        if self.synth.duration_frames < self.predictor.seq_len:
            raise ValueError("synth.duration_frames must cover t_obs + t_future")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """统一覆写所有随机种子"""
        return self.model_copy(update={
            "synth": self.synth.model_copy(update={"seed": seed}),
            "predictor": self.predictor.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
            "data": self.data.model_copy(update={"corrupt_seed": seed}),
        })


def config_hash(model: BaseModel) -> str:
    """规范 JSON（键排序）的 SHA-256 前 16 位"""
    canonical = json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """把 `a.b.c=value` 形式的覆写写入嵌套字典；value 按 YAML 标量解析。"""
    merged = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError("override must look like key=value", context={"override": item})
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigurationError("override key is empty", context={"override": item})
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError("override value is not parseable", context={"override": item}, cause=exc)
        node = merged
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError("override descends into a scalar", context={"override": item})
            node = child
        node[parts[-1]] = value
    return merged


def load_run_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """读取运行配置文件并应用覆写

    path 为 None 时尝试 settings.DEFAULT_RUN_CONFIG，缺失则使用内置默认值。
    """
    data: Dict[str, Any] = {}
    if path is None:
        candidate = Path(settings.DEFAULT_RUN_CONFIG)
        path = candidate if candidate.exists() else None
    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigurationError("run config file not found", context={"path": str(file_path)})
        try:
            with open(file_path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError("run config is not valid JSON/YAML", context={"path": str(file_path)}, cause=exc)
        if not isinstance(data, dict):
            raise ConfigurationError("run config must be a mapping", context={"path": str(file_path)})
    data = apply_overrides(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(
            "run config failed validation",
            context={"errors": [
                {"loc": ".".join(str(p) for p in e["loc"]), "msg": e["msg"]} for e in exc.errors()
            ]},
            cause=exc,
        )


# 创建全局配置实例
settings = Settings()
