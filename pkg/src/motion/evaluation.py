"""
评估：按 horizon 的 MPJPE 表、校准统计、不确定性图与预测文件读写

horizon 取单帧（与结果表逐时间戳列的口径一致），不做累计平均。
校准统计用于检验"方差即预测不确定性"是否成立。
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import stats

from ..core.config import PredictorConfig
from ..core.exceptions import ArgumentError, ArtifactIOError, ParseError, SchemaError
from .losses import GaussianPoseSequence, mpjpe
from .predictor import ModelParams, forward, init_params
from .skeleton_data import PoseSequence, SamplePair

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class HorizonReport:
    horizons_ms: List[float]
    frames: List[int]
    mpjpe_mm: List[float]
    mean_var: List[float]
    coverage_1sigma: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CalibrationStats:
    pearson_var_vs_sqerr: Optional[float]  # None：输入方差退化，相关系数无定义
    coverage_1sigma: float
    coverage_2sigma: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class UncertaintyMap:
    """(帧, 关节) 矩阵：三轴方差均值 (mm²)；行对应 row_frames"""

    values: np.ndarray
    row_frames: Tuple[int, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] != len(self.row_frames):
            raise ArgumentError("map values must be (frames, joints)", context={"shape": values.shape})
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_frames", tuple(int(f) for f in self.row_frames))

    @property
    def row_means(self) -> np.ndarray:
        return self.values.mean(axis=1)


@dataclass(frozen=True)
class EvaluationReport:
    samples: int
    per_source: Dict[str, HorizonReport]
    average: HorizonReport
    persistence: HorizonReport
    calibration: CalibrationStats
    uncertainty_map: UncertaintyMap
    horizon_trend: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "samples": self.samples,
            "per_source": {k: v.to_dict() for k, v in self.per_source.items()},
            "average": self.average.to_dict(),
            "persistence": self.persistence.to_dict(),
            "calibration": self.calibration.to_dict(),
            "mean_var_by_frame": [float(v) for v in self.uncertainty_map.row_means],
            "horizon_trend": self.horizon_trend,
        }


# ----------------------------------------------------------------------
# horizon 表
# ----------------------------------------------------------------------

def horizon_frames(horizons_ms: Sequence[float], frame_interval_ms: float, t_future: int) -> List[int]:
    """毫秒 horizon → 1 起始的未来帧号；不整除或越界的 horizon 全部列出"""
    frames, offenders = [], []
    for h in horizons_ms:
        ratio = float(h) / frame_interval_ms
        frame = int(round(ratio))
        if abs(ratio - frame) > 1e-9 or not 1 <= frame <= t_future:
            offenders.append(h)
        frames.append(frame)
    if offenders:
        raise ArgumentError(
            "horizons do not map to future frames",
            context={"offenders": offenders, "frame_interval_ms": frame_interval_ms, "t_future": t_future},
        )
    return frames


def mpjpe_at_horizons(
    pred: GaussianPoseSequence,
    truth: PoseSequence,
    horizons_ms: Sequence[float],
    frame_interval_ms: float,
) -> HorizonReport:
    frames = horizon_frames(horizons_ms, frame_interval_ms, pred.frames)
    errors, variances, coverage = [], [], []
    for frame in frames:
        at = slice(frame - 1, frame)
        errors.append(mpjpe(pred.mean[at], truth.coords[at]))
        variances.append(float(pred.var[at].mean()))
        residual = np.abs(pred.mean[at] - truth.coords[at])
        coverage.append(float(np.mean(residual <= np.sqrt(pred.var[at]))))
    return HorizonReport(
        horizons_ms=[float(h) for h in horizons_ms],
        frames=frames,
        mpjpe_mm=errors,
        mean_var=variances,
        coverage_1sigma=coverage,
    )


def aggregate_reports(reports: Sequence[HorizonReport]) -> HorizonReport:
    """逐 horizon 取平均"""
    if not reports:
        raise ArgumentError("no reports to aggregate")
    first = reports[0]
    if any(r.frames != first.frames for r in reports):
        raise ArgumentError("reports use different horizons")

    def _mean(key: str) -> List[float]:
        return [float(v) for v in np.mean([getattr(r, key) for r in reports], axis=0)]

    return HorizonReport(
        horizons_ms=list(first.horizons_ms),
        frames=list(first.frames),
        mpjpe_mm=_mean("mpjpe_mm"),
        mean_var=_mean("mean_var"),
        coverage_1sigma=_mean("coverage_1sigma"),
    )


# ----------------------------------------------------------------------
# 校准与不确定性图
# ----------------------------------------------------------------------

def stack_predictions(preds: Sequence[GaussianPoseSequence]) -> GaussianPoseSequence:
    """沿帧轴拼接多个样本的预测，便于整体统计"""
    return GaussianPoseSequence(
        np.concatenate([p.mean for p in preds]),
        np.concatenate([p.var for p in preds]),
        preds[0].frame_interval_ms,
    )


def calibration_stats(pred: GaussianPoseSequence, truth: PoseSequence | np.ndarray) -> CalibrationStats:
    target = truth.coords if isinstance(truth, PoseSequence) else np.asarray(truth, dtype=np.float64)
    if target.shape != pred.mean.shape:
        raise ArgumentError("prediction and truth shapes differ", context={"pred": pred.mean.shape, "truth": target.shape})
    var = pred.var.reshape(-1)
    residual = (pred.mean - target).reshape(-1)
    if var.size < 2:
        raise ArgumentError("calibration needs at least 2 coordinates")
    sq_err = residual ** 2
    if np.ptp(var) == 0 or np.ptp(sq_err) == 0:
        pearson = None
    else:
        pearson = float(stats.pearsonr(var, sq_err)[0])
    std = np.sqrt(var)
    return CalibrationStats(
        pearson_var_vs_sqerr=pearson,
        coverage_1sigma=float(np.mean(np.abs(residual) <= std)),
        coverage_2sigma=float(np.mean(np.abs(residual) <= 2.0 * std)),
    )


def uncertainty_map(pred: GaussianPoseSequence, first_frame: int = 1) -> UncertaintyMap:
    """entry (t, i) = (var_x + var_y + var_z) / 3"""
    return UncertaintyMap(
        values=pred.var.mean(axis=2),
        row_frames=tuple(range(first_frame, first_frame + pred.frames)),
    )


def mean_uncertainty_map(preds: Sequence[GaussianPoseSequence], first_frame: int = 1) -> UncertaintyMap:
    maps = [uncertainty_map(p, first_frame).values for p in preds]
    return UncertaintyMap(values=np.mean(maps, axis=0), row_frames=tuple(range(first_frame, first_frame + maps[0].shape[0])))


def horizon_trend(umap: UncertaintyMap) -> Optional[float]:
    """帧序号与行均值的 Spearman 秩相关；行均值恒定时无定义"""
    means = umap.row_means
    if means.size < 2 or np.ptp(means) == 0:
        return None
    return float(stats.spearmanr(np.arange(means.size), means)[0])


# ----------------------------------------------------------------------
# 数据集级评估
# ----------------------------------------------------------------------

def persistence_params(cfg: PredictorConfig) -> ModelParams:
    """零参数网络：末帧保持基线"""
    return {name: np.zeros_like(p) for name, p in init_params(cfg).items()}


def predict_pairs(params: ModelParams, cfg: PredictorConfig, pairs: Sequence[SamplePair]) -> List[GaussianPoseSequence]:
    return [forward(params, pair.observed, cfg) for pair in pairs]


def _grouped_report(
    preds: Sequence[GaussianPoseSequence],
    pairs: Sequence[SamplePair],
    horizons_ms: Sequence[float],
    frame_interval_ms: float,
) -> Tuple[Dict[str, HorizonReport], HorizonReport]:
    grouped: Dict[str, List[HorizonReport]] = OrderedDict()
    for pred, pair in zip(preds, pairs):
        report = mpjpe_at_horizons(pred, pair.future, horizons_ms, frame_interval_ms)
        grouped.setdefault(pair.source_id or "default", []).append(report)
    per_source = {source: aggregate_reports(reports) for source, reports in sorted(grouped.items())}
    return per_source, aggregate_reports(list(per_source.values()))


def evaluate_pairs(
    params: ModelParams,
    cfg: PredictorConfig,
    pairs: Sequence[SamplePair],
    horizons_ms: Sequence[float],
    frame_interval_ms: float,
) -> EvaluationReport:
    """逐来源 horizon 表 + 平均行 + 末帧保持基线 + 校准 + 平均不确定性图"""
    if not pairs:
        raise ArgumentError("evaluation set is empty")
    preds = predict_pairs(params, cfg, pairs)
    per_source, average = _grouped_report(preds, pairs, horizons_ms, frame_interval_ms)
    _, persistence = _grouped_report(predict_pairs(persistence_params(cfg), cfg, pairs), pairs, horizons_ms, frame_interval_ms)

    truth = np.concatenate([pair.future.coords for pair in pairs])
    umap = mean_uncertainty_map(preds, first_frame=cfg.t_obs + 1)
    report = EvaluationReport(
        samples=len(pairs),
        per_source=per_source,
        average=average,
        persistence=persistence,
        calibration=calibration_stats(stack_predictions(preds), truth),
        uncertainty_map=umap,
        horizon_trend=horizon_trend(umap),
    )
    logger.info(
        "evaluation.done",
        samples=len(pairs),
        mpjpe_mm=average.mpjpe_mm,
        persistence_mpjpe_mm=persistence.mpjpe_mm,
    )
    return report


# ----------------------------------------------------------------------
# 文件读写
# ----------------------------------------------------------------------

def save_json(payload: Dict[str, Any], path: str | Path) -> Path:
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError("cannot write JSON artifact", context={"path": str(file_path)}, cause=exc)
    return file_path


def save_prediction(pred: GaussianPoseSequence, path: str | Path, first_frame: int = 0) -> Path:
    """JSONL：每行一帧 {"t", "joints": [[mu_x, var_x, mu_y, var_y, mu_z, var_z], ...]}"""
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as fh:
            for offset in range(pred.frames):
                joints = [
                    [float(v) for axis in range(3) for v in (pred.mean[offset, j, axis], pred.var[offset, j, axis])]
                    for j in range(pred.joints)
                ]
                fh.write(json.dumps({"t": first_frame + offset, "joints": joints}) + "\n")
    except OSError as exc:
        raise ArtifactIOError("cannot write prediction file", context={"path": str(file_path)}, cause=exc)
    return file_path


def load_prediction(path: str | Path, frame_interval_ms: float = 40.0) -> Tuple[GaussianPoseSequence, int]:
    """读回 save_prediction 的文件，返回 (预测, 首帧 t)"""
    file_path = Path(path)
    if not file_path.exists():
        raise ArtifactIOError("prediction file not found", context={"path": str(file_path)})
    rows: List[np.ndarray] = []
    first_t: Optional[int] = None
    with open(file_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                t = int(record["t"])
                frame = np.asarray(record["joints"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError("malformed prediction record", line=line_no, cause=exc)
            if frame.ndim != 2 or frame.shape[1] != 6:
                raise SchemaError("each joint needs 6 values (mu, var per axis)", context={"line": line_no})
            if rows and frame.shape != rows[0].shape:
                raise SchemaError("inconsistent joint count", context={"line": line_no})
            first_t = t if first_t is None else first_t
            rows.append(frame)
    if not rows:
        raise ParseError("prediction file contains no frames", line=0, context={"path": str(file_path)})
    stacked = np.stack(rows)
    pred = GaussianPoseSequence(stacked[..., 0::2], stacked[..., 1::2], frame_interval_ms)
    return pred, int(first_t)
