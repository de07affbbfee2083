"""
二进制检查点编解码

布局（全部小端）：
    b"UAHMP1" | u32 张量数 | 每个张量：u32 名称长度 + UTF-8 名称 + u32 rank + rank×u32 维度 + 数据
浮点张量为 float64，名称前缀 param/ adam_m/ adam_v/ best/ 区分分组（best/ 为最优验证 epoch 的参数快照）；
最后一个张量 `__meta__` 存放 UTF-8 JSON 字节（配置、哈希、优化器计数）。
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import structlog

from ..core.config import PredictorConfig, TrainConfig, config_hash
from ..core.exceptions import ArtifactIOError, CheckpointFormatError

logger = structlog.get_logger(__name__)

MAGIC = b"UAHMP1"
META_TENSOR = "__meta__"
_U32 = struct.Struct("<I")

ArrayDict = Dict[str, np.ndarray]


@dataclass
class ModelCheckpoint:
    """模型参数 + Adam 状态 + 最优参数快照 + 配置哈希"""

    params: ArrayDict
    predictor_cfg: PredictorConfig
    train_cfg: Optional[TrainConfig] = None
    adam_m: ArrayDict = field(default_factory=dict)
    adam_v: ArrayDict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    best_val_mpjpe: float = math.inf
    stale_epochs: int = 0
    best_params: ArrayDict = field(default_factory=dict)
    best_step: int = 0
    best_epoch: int = 0
    config_hash: str = ""

    def __post_init__(self) -> None:
        if not self.config_hash:
            self.config_hash = config_hash(self.predictor_cfg)

    def meta(self) -> Dict[str, Any]:
        return {
            "predictor": self.predictor_cfg.model_dump(mode="json"),
            "train": self.train_cfg.model_dump(mode="json") if self.train_cfg else None,
            "config_hash": self.config_hash,
            "step": self.step,
            "epoch": self.epoch,
            "best_val_mpjpe": self.best_val_mpjpe,
            "stale_epochs": self.stale_epochs,
            "best_step": self.best_step,
            "best_epoch": self.best_epoch,
        }


def _pack_tensor(name: str, dims: tuple, payload: bytes) -> bytes:
    encoded = name.encode("utf-8")
    parts = [_U32.pack(len(encoded)), encoded, _U32.pack(len(dims))]
    parts.extend(_U32.pack(d) for d in dims)
    parts.append(payload)
    return b"".join(parts)


def encode_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    tensors = []
    groups = (
        ("param", ckpt.params),
        ("adam_m", ckpt.adam_m),
        ("adam_v", ckpt.adam_v),
        ("best", ckpt.best_params),
    )
    for prefix, group in groups:
        for name, arr in group.items():
            arr = np.asarray(arr, dtype="<f8")
            tensors.append(_pack_tensor(f"{prefix}/{name}", arr.shape, arr.tobytes(order="C")))
    meta = json.dumps(ckpt.meta(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors.append(_pack_tensor(META_TENSOR, (len(meta),), meta))
    return MAGIC + _U32.pack(len(tensors)) + b"".join(tensors)


class _Reader:
    def __init__(self, blob: bytes) -> None:
        self.blob = blob
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise CheckpointFormatError("checkpoint is truncated", context={"offset": self.pos, "needed": size})
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(blob: bytes) -> ModelCheckpoint:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("bad magic bytes", context={"found": blob[:len(MAGIC)].hex()})
    reader = _Reader(blob)
    reader.take(len(MAGIC))
    groups: Dict[str, ArrayDict] = {"param": {}, "adam_m": {}, "adam_v": {}, "best": {}}
    meta: Optional[Dict[str, Any]] = None
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8", cause=exc)
        dims = tuple(reader.u32() for _ in range(reader.u32()))
        if name == META_TENSOR:
            try:
                meta = json.loads(reader.take(int(np.prod(dims))).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointFormatError("metadata tensor is not valid JSON", cause=exc)
            continue
        prefix, _, key = name.partition("/")
        if prefix not in groups or not key:
            raise CheckpointFormatError("unknown tensor name", context={"name": name})
        payload = reader.take(8 * int(np.prod(dims, dtype=np.int64)))
        groups[prefix][key] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if reader.pos != len(blob):
        raise CheckpointFormatError("trailing bytes after last tensor", context={"extra": len(blob) - reader.pos})
    if meta is None:
        raise CheckpointFormatError("metadata tensor missing")
    try:
        return ModelCheckpoint(
            params=groups["param"],
            adam_m=groups["adam_m"],
            adam_v=groups["adam_v"],
            predictor_cfg=PredictorConfig.model_validate(meta["predictor"]),
            train_cfg=TrainConfig.model_validate(meta["train"]) if meta.get("train") else None,
            step=int(meta["step"]),
            epoch=int(meta["epoch"]),
            best_val_mpjpe=float(meta["best_val_mpjpe"]),
            stale_epochs=int(meta.get("stale_epochs", 0)),
            best_params=groups["best"],
            best_step=int(meta.get("best_step", 0)),
            best_epoch=int(meta.get("best_epoch", 0)),
            config_hash=str(meta["config_hash"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError("metadata tensor is incomplete", cause=exc)


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> Path:
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_bytes(encode_checkpoint(ckpt))
    except OSError as exc:
        raise ArtifactIOError("cannot write checkpoint", context={"path": str(file_path)}, cause=exc)
    logger.info("checkpoint.saved", path=str(file_path), step=ckpt.step, epoch=ckpt.epoch)
    return file_path


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    file_path = Path(path)
    try:
        blob = file_path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError("cannot read checkpoint", context={"path": str(file_path)}, cause=exc)
    ckpt = decode_checkpoint(blob)
    logger.info("checkpoint.loaded", path=str(file_path), step=ckpt.step, epoch=ckpt.epoch)
    return ckpt
