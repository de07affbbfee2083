"""
骨架序列数据：读写、合成、切窗与样本污染

坐标单位固定为毫米；PoseSequence 构造后只读，可安全跨线程共享。
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import List, Sequence

import numpy as np
import structlog

from ..core.config import SynthConfig
from ..core.exceptions import (
    ArgumentError,
    ArtifactIOError,
    DataError,
    ParseError,
    SchemaError,
    create_error_context,
)

logger = structlog.get_logger(__name__)

ROOT_JOINT = 0
CSV_DECIMALS = 6


class PoseFormat(str, Enum):
    CSV = "csv"
    JSONL = "jsonl"


def _frozen_array(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PoseSequence:
    """T×N×3 关节坐标 (mm)"""

    coords: np.ndarray
    frame_interval_ms: float = 40.0

    def __post_init__(self) -> None:
        coords = _frozen_array(self.coords)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise SchemaError("pose coords must have shape (frames, joints, 3)", context={"shape": coords.shape})
        if coords.shape[0] < 1 or coords.shape[1] < 1:
            raise SchemaError("pose sequence needs at least one frame and one joint", context={"shape": coords.shape})
        if not np.all(np.isfinite(coords)):
            raise DataError("pose coords contain non-finite values")
        if not self.frame_interval_ms > 0:
            raise ArgumentError("frame_interval_ms must be positive", context={"frame_interval_ms": self.frame_interval_ms})
        object.__setattr__(self, "coords", coords)

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]

    def slice(self, start: int, stop: int) -> "PoseSequence":
        return PoseSequence(self.coords[start:stop], self.frame_interval_ms)


@dataclass(frozen=True)
class SamplePair:
    """监督样本：观测段 + 未来段"""

    observed: PoseSequence
    future: PoseSequence
    source_id: str = ""
    corrupted: bool = False
    start_frame: int = 0

    def __post_init__(self) -> None:
        if self.observed.joints != self.future.joints:
            raise SchemaError(
                "observed and future disagree on joint count",
                context={"observed": self.observed.joints, "future": self.future.joints},
            )
        if self.observed.frame_interval_ms != self.future.frame_interval_ms:
            raise SchemaError("observed and future disagree on frame interval")


# ----------------------------------------------------------------------
# 文件读写
# ----------------------------------------------------------------------

def _parse_float(raw: str, line: int) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ParseError(f"not a number: {raw!r}", line=line, cause=exc)


def _read_csv(path: Path) -> List[np.ndarray]:
    frames: List[np.ndarray] = []
    joints = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if line_no == 1 and row[0].strip().lower().startswith("frame"):
                continue  # 可选表头
            coords = [_parse_float(cell.strip(), line_no) for cell in row[1:]]
            _parse_float(row[0].strip(), line_no)
            if not coords or len(coords) % 3 != 0:
                raise SchemaError(
                    "coordinate fields are not a multiple of 3",
                    context=create_error_context(line=line_no, fields=len(coords)),
                )
            n = len(coords) // 3
            if joints is None:
                joints = n
            elif n != joints:
                raise SchemaError(
                    "inconsistent joint count",
                    context=create_error_context(line=line_no, expected=joints, got=n),
                )
            frame = np.asarray(coords, dtype=np.float64).reshape(n, 3)
            if not np.all(np.isfinite(frame)):
                raise DataError("non-finite coordinate", context={"line": line_no})
            frames.append(frame)
    return frames


def _read_jsonl(path: Path) -> List[np.ndarray]:
    frames: List[np.ndarray] = []
    joints = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                raw_joints = record["joints"]
                int(record["t"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError("malformed pose record", line=line_no, cause=exc)
            if not isinstance(raw_joints, list) or not raw_joints:
                raise SchemaError("joints must be a non-empty list", context={"line": line_no})
            if any(not isinstance(j, list) or len(j) != 3 for j in raw_joints):
                raise SchemaError("every joint needs exactly 3 coordinates", context={"line": line_no})
            if joints is None:
                joints = len(raw_joints)
            elif len(raw_joints) != joints:
                raise SchemaError(
                    "inconsistent joint count",
                    context=create_error_context(line=line_no, expected=joints, got=len(raw_joints)),
                )
            try:
                frame = np.asarray(raw_joints, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise ParseError("joint coordinate is not a number", line=line_no, cause=exc)
            if not np.all(np.isfinite(frame)):
                raise DataError("non-finite coordinate", context={"line": line_no})
            frames.append(frame)
    return frames


def load_sequence(
    path: str | Path,
    format: PoseFormat | str = PoseFormat.CSV,
    frame_interval_ms: float = 40.0,
) -> PoseSequence:
    """按文件顺序读取全部帧；关节数由首条记录决定并在之后强制一致"""
    fmt = PoseFormat(format)
    file_path = Path(path)
    if not file_path.exists():
        raise ArtifactIOError("pose file not found", context={"path": str(file_path)})
    frames = _read_csv(file_path) if fmt is PoseFormat.CSV else _read_jsonl(file_path)
    if not frames:
        raise ParseError("pose file contains no frames", line=0, context={"path": str(file_path)})
    seq = PoseSequence(np.stack(frames), frame_interval_ms)
    logger.debug("skeleton_data.loaded", path=str(file_path), frames=seq.frames, joints=seq.joints)
    return seq


def save_sequence(seq: PoseSequence, path: str | Path) -> Path:
    """写 CSV：每行 frame_index, x_0, y_0, z_0, ...（6 位小数）"""
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8", newline="") as fh:
            for t, frame in enumerate(seq.coords):
                values = ",".join(f"{v:.{CSV_DECIMALS}f}" for v in frame.reshape(-1))
                fh.write(f"{t},{values}\n")
    except OSError as exc:
        raise ArtifactIOError("cannot write pose file", context={"path": str(file_path)}, cause=exc)
    return file_path


# ----------------------------------------------------------------------
# 切窗
# ----------------------------------------------------------------------

def window_split(
    seq: PoseSequence,
    T: int,
    T_f: int,
    stride: int = 1,
    source_id: str = "",
) -> List[SamplePair]:
    """切出 ⌊(T_total − T_f)/stride⌋ + 1 个 (observed, future) 样本对"""
    if T < 1 or T_f <= T or stride < 1:
        raise ArgumentError(
            "window_split needs T >= 1, T_f > T, stride >= 1",
            context={"T": T, "T_f": T_f, "stride": stride},
        )
    if seq.frames < T_f:
        return []
    pairs: List[SamplePair] = []
    for start in range(0, seq.frames - T_f + 1, stride):
        pairs.append(SamplePair(
            observed=seq.slice(start, start + T),
            future=seq.slice(start + T, start + T_f),
            source_id=source_id,
            start_frame=start,
        ))
    return pairs


def remove_root_translation(pair: SamplePair) -> SamplePair:
    """减去首个观测帧的根关节位置（作用于整个样本对）"""
    origin = pair.observed.coords[0, ROOT_JOINT]
    return replace(
        pair,
        observed=PoseSequence(pair.observed.coords - origin, pair.observed.frame_interval_ms),
        future=PoseSequence(pair.future.coords - origin, pair.future.frame_interval_ms),
    )


# ----------------------------------------------------------------------
# 合成与污染
# ----------------------------------------------------------------------

def synth_phases(joints: int) -> np.ndarray:
    """固定相位：按坐标轴错开 2π/3，按关节错开 π/5"""
    axis = 2.0 * math.pi * np.arange(3) / 3.0
    joint = math.pi * np.arange(joints) / 5.0
    return joint[:, None] + axis[None, :]


def synth_clean(cfg: SynthConfig) -> np.ndarray:
    """无噪声正弦信号 (T, N, 3)"""
    dt = cfg.frame_interval_ms / 1000.0
    t = np.arange(cfg.duration_frames, dtype=np.float64)[:, None, None]
    freqs = np.asarray(cfg.base_frequencies, dtype=np.float64)[None, :, None]
    amps = np.asarray(cfg.amplitude_mm, dtype=np.float64)[None, :, None]
    phases = synth_phases(cfg.joints)[None, :, :]
    return amps * np.sin(2.0 * math.pi * freqs * t * dt + phases)


def synth_noise_std(cfg: SynthConfig) -> np.ndarray:
    """逐帧噪声标准差：noise_floor_mm + t·noise_growth_per_frame"""
    return cfg.noise_floor_mm + np.arange(cfg.duration_frames, dtype=np.float64) * cfg.noise_growth_per_frame


def synth_generate(cfg: SynthConfig) -> PoseSequence:
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((cfg.duration_frames, cfg.joints, 3))
    coords = synth_clean(cfg) + noise * synth_noise_std(cfg)[:, None, None]
    return PoseSequence(coords, cfg.frame_interval_ms)


def corrupt_samples(
    pairs: Sequence[SamplePair],
    fraction: float,
    noise_std_mm: float,
    seed: int,
) -> List[SamplePair]:
    """随机选 ⌊fraction·len⌋ 个样本，对其未来帧加 i.i.d. 高斯噪声并打标"""
    if not 0.0 <= fraction <= 1.0 or noise_std_mm < 0:
        raise ArgumentError(
            "corrupt_samples needs fraction in [0, 1] and noise_std_mm >= 0",
            context={"fraction": fraction, "noise_std_mm": noise_std_mm},
        )
    out = list(pairs)
    # 按十进制字面值取整：0.57 × 100 → 57
    count = math.floor(Fraction(repr(float(fraction))) * len(out))
    if count == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(out), size=count, replace=False))
    for idx in chosen:
        pair = out[idx]
        noise = rng.normal(0.0, noise_std_mm, size=pair.future.coords.shape)
        out[idx] = replace(
            pair,
            future=PoseSequence(pair.future.coords + noise, pair.future.frame_interval_ms),
            corrupted=True,
        )
    logger.debug("skeleton_data.corrupted", total=len(out), corrupted=count, noise_std_mm=noise_std_mm)
    return out
