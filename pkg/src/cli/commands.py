"""
CLI 子命令实现：数据集组装 + 各模块的薄编排

每个命令都把解析后的配置、配置哈希与版本信息写入输出目录的 run_info.json；
相同配置重跑得到逐字节相同的产物（run_info 不含时间戳）。
"""
from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..core.config import LossMode, RunConfig, config_hash, settings
from ..core.exceptions import ArgumentError, ArtifactIOError, TrainingDivergedError
from ..motion.checkpoint import load_checkpoint, save_checkpoint
from ..motion.evaluation import (
    evaluate_pairs,
    horizon_trend,
    load_prediction,
    mean_uncertainty_map,
    predict_pairs,
    save_json,
    save_prediction,
    uncertainty_map,
)
from ..motion.losses import GaussianPoseSequence, mpjpe
from ..motion.predictor import forward, head_report, param_count
from ..motion.skeleton_data import (
    ROOT_JOINT,
    PoseFormat,
    PoseSequence,
    SamplePair,
    corrupt_samples,
    load_sequence,
    remove_root_translation,
    save_sequence,
    synth_generate,
    window_split,
)
from ..motion.trainer import train, write_metrics_log
from ..motion.visualize import MapFormat, map_format_for, render_map, render_pointsize_svg

logger = structlog.get_logger(__name__)

PACKAGE_NAME = "uahmp"
_SUFFIX_FORMATS = {".csv": PoseFormat.CSV, ".jsonl": PoseFormat.JSONL}


# ----------------------------------------------------------------------
# 运行信息
# ----------------------------------------------------------------------

def package_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "unknown"


def git_revision() -> Optional[str]:
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=5, check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if result.returncode != 0:
        return None
    return result.stdout.strip() or None


def write_run_info(cfg: RunConfig, command: str, out_dir: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    payload: Dict[str, Any] = {
        "app": settings.APP_NAME,
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
        "version": package_version(),
        "git_revision": git_revision(),
    }
    if extra:
        payload.update(extra)
    return save_json(payload, out_dir / "run_info.json")


def emit_result(payload: Dict[str, Any]) -> None:
    """stdout 只输出一行 JSON 结果"""
    print(json.dumps(payload, sort_keys=True, default=str))


# ----------------------------------------------------------------------
# 数据集组装
# ----------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: List[SamplePair] = field(default_factory=list)
    val: List[SamplePair] = field(default_factory=list)


def pose_format_for(path: Path) -> PoseFormat:
    try:
        return _SUFFIX_FORMATS[path.suffix.lower()]
    except KeyError:
        raise ArgumentError("unsupported pose file suffix", context={"path": str(path), "supported": sorted(_SUFFIX_FORMATS)})


def load_sequences(cfg: RunConfig) -> List[Tuple[str, PoseSequence]]:
    """dataset_dir 下的全部 CSV/JSONL（按文件名排序）；未配置时在内存中合成"""
    if cfg.paths.dataset_dir:
        root = Path(cfg.paths.dataset_dir)
        if not root.is_dir():
            raise ArtifactIOError("dataset directory not found", context={"path": str(root)})
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in _SUFFIX_FORMATS)
        if not files:
            raise ArtifactIOError("dataset directory holds no pose files", context={"path": str(root)})
        return [
            (path.stem, load_sequence(path, pose_format_for(path), cfg.data.frame_interval_ms))
            for path in files
        ]
    return [
        (f"seq_{i:03d}", synth_generate(cfg.synth.model_copy(update={"seed": cfg.synth.seed + i})))
        for i in range(cfg.data.n_sequences)
    ]


def split_windows(pairs: Sequence[SamplePair], val_fraction: float) -> Tuple[List[SamplePair], List[SamplePair]]:
    """按时间顺序切分：末尾 val_fraction 的窗口作验证；与验证段重叠的训练窗口丢弃"""
    n_val = int(round(len(pairs) * val_fraction))
    if n_val == 0:
        return list(pairs), []
    val = list(pairs[-n_val:])
    val_start = val[0].start_frame
    train_pairs = [
        p for p in pairs[:-n_val]
        if p.start_frame + p.observed.frames + p.future.frames <= val_start
    ]
    return train_pairs, val


def build_dataset(cfg: RunConfig, stride: Optional[int] = None) -> DatasetSplit:
    pred_cfg = cfg.predictor
    split = DatasetSplit()
    for source_id, seq in load_sequences(cfg):
        if seq.joints != pred_cfg.joints:
            raise ArgumentError(
                "sequence joint count does not match predictor.joints",
                context={"source": source_id, "joints": seq.joints, "expected": pred_cfg.joints},
            )
        pairs = window_split(seq, pred_cfg.t_obs, pred_cfg.seq_len, stride or cfg.data.stride, source_id)
        if cfg.data.center_root:
            pairs = [remove_root_translation(p) for p in pairs]
        train_pairs, val_pairs = split_windows(pairs, cfg.data.val_fraction)
        split.train.extend(train_pairs)
        split.val.extend(val_pairs)
    split.train = corrupt_samples(
        split.train, cfg.data.corrupt_fraction, cfg.data.corrupt_noise_std_mm, cfg.data.corrupt_seed
    )
    logger.info(
        "dataset.built",
        train=len(split.train),
        val=len(split.val),
        corrupted=sum(p.corrupted for p in split.train),
    )
    return split


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError("cannot create output directory", context={"path": str(out)}, cause=exc)
    return out


def _require_checkpoint(cfg: RunConfig, checkpoint: Optional[str]) -> Path:
    path = checkpoint or cfg.paths.checkpoint
    if not path:
        raise ArgumentError("no checkpoint given (use --checkpoint or paths.checkpoint)")
    return Path(path)


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> Dict[str, Any]:
    """写 seq_XXX.csv 与 manifest.json"""
    out = _out_dir(cfg)
    entries = []
    for i in range(cfg.data.n_sequences):
        seed = cfg.synth.seed + i
        seq = synth_generate(cfg.synth.model_copy(update={"seed": seed}))
        name = f"seq_{i:03d}.csv"
        save_sequence(seq, out / name)
        entries.append({"file": name, "seed": seed, "frames": seq.frames, "joints": seq.joints})
    manifest = {
        "synth": cfg.synth.model_dump(mode="json"),
        "sequences": entries,
        "noise_schedule": {
            "noise_floor_mm": cfg.synth.noise_floor_mm,
            "noise_growth_per_frame": cfg.synth.noise_growth_per_frame,
        },
        "config_hash": config_hash(cfg.synth),
    }
    save_json(manifest, out / "manifest.json")
    write_run_info(cfg, "synth", out)
    logger.info("cli.synth_done", out_dir=str(out), sequences=len(entries))
    return {"out_dir": str(out), "sequences": len(entries)}


def cmd_train(cfg: RunConfig, resume: Optional[str] = None) -> Dict[str, Any]:
    out = _out_dir(cfg)
    split = build_dataset(cfg)
    resume_ckpt = load_checkpoint(resume) if resume else None
    if resume_ckpt is not None and resume_ckpt.config_hash != config_hash(cfg.predictor):
        raise ArgumentError(
            "checkpoint was trained with a different predictor config",
            context={"checkpoint": resume_ckpt.config_hash, "config": config_hash(cfg.predictor)},
        )
    report = head_report(cfg.predictor)
    write_run_info(cfg, "train", out, {"head_report": report})

    try:
        result = train(cfg.train, split.train, split.val, cfg.predictor, resume=resume_ckpt)
    except TrainingDivergedError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, out / "diverged.ckpt")
            exc.context["checkpoint_path"] = str(out / "diverged.ckpt")
        raise

    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.last, out / "last.ckpt")
    write_metrics_log(result.metrics, out / "metrics.jsonl")
    return {
        "out_dir": str(out),
        "epochs": result.last.epoch,
        "best_val_mpjpe_mm": result.best.best_val_mpjpe if result.metrics else None,
        "param_count": param_count(result.last.params),
        "head_report": report,
    }


def eval_pairs(cfg: RunConfig) -> List[SamplePair]:
    """评估集：eval_stride 切窗后的验证窗口；无验证集时用全部干净窗口"""
    split = build_dataset(cfg.model_copy(update={"data": cfg.data.model_copy(update={"corrupt_fraction": 0.0})}),
                          stride=cfg.eval.eval_stride)
    return split.val or split.train


def cmd_eval(cfg: RunConfig, checkpoint: Optional[str] = None) -> Dict[str, Any]:
    out = _out_dir(cfg)
    ckpt = load_checkpoint(_require_checkpoint(cfg, checkpoint))
    run_cfg = cfg.model_copy(update={"predictor": ckpt.predictor_cfg})
    pairs = eval_pairs(run_cfg)
    report = evaluate_pairs(ckpt.params, ckpt.predictor_cfg, pairs, cfg.eval.horizons_ms, cfg.data.frame_interval_ms)
    payload = report.to_dict()
    payload["checkpoint_config_hash"] = ckpt.config_hash
    save_json(payload, out / "eval_report.json")
    render_map(report.uncertainty_map, out / "uncertainty_map.csv", MapFormat.CSV)
    write_run_info(run_cfg, "eval", out)
    return {
        "out_dir": str(out),
        "samples": report.samples,
        "horizons_ms": report.average.horizons_ms,
        "mpjpe_mm": report.average.mpjpe_mm,
        "persistence_mpjpe_mm": report.persistence.mpjpe_mm,
    }


def cmd_predict(cfg: RunConfig, observed_path: str, checkpoint: Optional[str] = None) -> Dict[str, Any]:
    """对观测文件的最后 t_obs 帧做预测；输出帧号接在输入之后"""
    out = _out_dir(cfg)
    ckpt = load_checkpoint(_require_checkpoint(cfg, checkpoint))
    pred_cfg = ckpt.predictor_cfg
    path = Path(observed_path)
    seq = load_sequence(path, pose_format_for(path), cfg.data.frame_interval_ms)
    if seq.frames < pred_cfg.t_obs:
        raise ArgumentError("observed file is shorter than t_obs", context={"frames": seq.frames, "t_obs": pred_cfg.t_obs})
    observed = seq.slice(seq.frames - pred_cfg.t_obs, seq.frames)
    origin = observed.coords[0, ROOT_JOINT] if cfg.data.center_root else np.zeros(3)
    pred = forward(ckpt.params, PoseSequence(observed.coords - origin, observed.frame_interval_ms), pred_cfg)
    pred = GaussianPoseSequence(pred.mean + origin, pred.var, pred.frame_interval_ms)

    target = save_prediction(pred, out / "prediction.jsonl", first_frame=seq.frames)
    write_run_info(cfg.model_copy(update={"predictor": pred_cfg}), "predict", out, {"observed": str(path)})
    return {"prediction": str(target), "frames": pred.frames, "first_frame": seq.frames}


def cmd_visualize(
    cfg: RunConfig,
    prediction_path: str,
    truth_path: Optional[str] = None,
    formats: Sequence[str] = ("csv", "pgm", "svg"),
) -> Dict[str, Any]:
    out = _out_dir(cfg)
    pred, first_t = load_prediction(prediction_path, cfg.data.frame_interval_ms)
    truth = None
    if truth_path:
        path = Path(truth_path)
        full = load_sequence(path, pose_format_for(path), cfg.data.frame_interval_ms)
        if full.frames < first_t + pred.frames:
            raise ArgumentError(
                "truth file does not cover the predicted frames",
                context={"frames": full.frames, "needed": first_t + pred.frames},
            )
        truth = full.slice(first_t, first_t + pred.frames)

    umap = uncertainty_map(pred, first_frame=first_t)
    written = [str(render_map(umap, out / f"uncertainty_map.{map_format_for(f).value}", f)) for f in formats]
    written.append(str(render_pointsize_svg(pred, truth, out / "pointsize.svg")))
    write_run_info(cfg, "visualize", out, {"prediction": str(prediction_path)})
    return {"artifacts": written, "horizon_trend": horizon_trend(umap)}


def cmd_ablate(cfg: RunConfig) -> Dict[str, Any]:
    """噪声样本消融：各 loss_mode × 各 seed 训练，比较干净验证集 MPJPE 与惩罚权重"""
    out = _out_dir(cfg)
    runs: List[Dict[str, Any]] = []
    for seed in cfg.ablation.seeds:
        seeded = cfg.with_seed(seed)
        split = build_dataset(seeded)
        if not split.val:
            raise ArgumentError("ablation needs a validation split (data.val_fraction > 0)")
        for mode in cfg.ablation.loss_modes:
            train_cfg = seeded.train.model_copy(update={"loss_mode": LossMode(mode)})
            result = train(train_cfg, split.train, split.val, seeded.predictor)
            params = result.last.params
            preds = predict_pairs(params, seeded.predictor, split.val)
            last = result.metrics[-1] if result.metrics else {}
            runs.append({
                "seed": seed,
                "loss_mode": LossMode(mode).value,
                "val_mpjpe_mm": float(np.mean([mpjpe(p.mean, pair.future) for p, pair in zip(preds, split.val)])),
                "mean_w_clean": last.get("mean_w_clean"),
                "mean_w_corrupted": last.get("mean_w_corrupted"),
                "horizon_trend": horizon_trend(mean_uncertainty_map(preds, first_frame=seeded.predictor.t_obs + 1)),
            })
            logger.info("cli.ablation_run", **runs[-1])

    summary: Dict[str, Dict[str, Optional[float]]] = {}
    for mode in cfg.ablation.loss_modes:
        rows = [r for r in runs if r["loss_mode"] == LossMode(mode).value]
        summary[LossMode(mode).value] = {
            key: _mean_or_none([r[key] for r in rows])
            for key in ("val_mpjpe_mm", "mean_w_clean", "mean_w_corrupted", "horizon_trend")
        }
    save_json({"runs": runs, "summary": summary}, out / "ablation.json")
    write_run_info(cfg, "ablate", out)
    return {"out_dir": str(out), "summary": summary}


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None
