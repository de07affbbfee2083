"""
不确定性可视化

- 点大小渲染：每个预测关节画成半径 r = r_min + α·√(三轴方差均值) 的圆，逐帧水平错开
- 不确定性图：横轴关节、纵轴时间，CSV（原始 mm²）/ PGM（min-max 归一化）/ SVG

渲染只依赖输入与固定样式常量；相同输入得到逐字节相同的文件。
"""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Circle
import numpy as np
import structlog
from PIL import Image

from ..core.exceptions import ArgumentError, ArtifactIOError, ParseError
from .evaluation import UncertaintyMap
from .losses import GaussianPoseSequence
from .skeleton_data import PoseSequence

logger = structlog.get_logger(__name__)

R_MIN_PX = 1.5
ALPHA_PX_PER_MM = 0.5
FRAME_OFFSET_PX = 120.0
MM_TO_PX = 0.25
PADDING_PX = 40.0
MAP_DECIMALS = 6

# 固定 SVG id 盐值并去掉时间戳
_SVG_RC = {"svg.hashsalt": "uahmp", "svg.fonttype": "none"}
_SVG_METADATA = {"Date": None}


class MapFormat(str, Enum):
    CSV = "csv"
    PGM = "pgm"
    SVG = "svg"


def map_format_for(value: MapFormat | str) -> MapFormat:
    try:
        return MapFormat(value)
    except ValueError:
        raise ArgumentError(
            "unsupported uncertainty map format",
            context={"format": str(value), "supported": [f.value for f in MapFormat]},
        )


def disc_radii(pred: GaussianPoseSequence) -> np.ndarray:
    """(frames, joints) 圆半径 (px)"""
    return R_MIN_PX + ALPHA_PX_PER_MM * np.sqrt(pred.var.mean(axis=2))


def _project(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """x–y 平面投影到像素坐标，逐帧水平偏移"""
    frames = np.arange(coords.shape[0])[:, None]
    x = frames * FRAME_OFFSET_PX + coords[..., 0] * MM_TO_PX
    y = -coords[..., 1] * MM_TO_PX
    return x, y


def _save_svg(fig: plt.Figure, out_path: Path) -> Path:
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata=_SVG_METADATA)
    except OSError as exc:
        raise ArtifactIOError("cannot write SVG", context={"path": str(out_path)}, cause=exc)
    finally:
        plt.close(fig)
    return out_path


def render_pointsize_svg(
    pred: GaussianPoseSequence,
    truth: Optional[PoseSequence],
    out_path: str | Path,
    bones: Sequence[Tuple[int, int]] = (),
) -> Path:
    """预测关节画成实心圆（越大越不确定）；真值画成空心小圆"""
    px, py = _project(pred.mean)
    radii = disc_radii(pred)
    xs, ys = [px], [py]
    if truth is not None:
        tx, ty = _project(truth.coords)
        xs.append(tx)
        ys.append(ty)
    margin = float(radii.max()) + PADDING_PX
    x0 = min(float(a.min()) for a in xs) - margin
    y0 = min(float(a.min()) for a in ys) - margin
    width = max(float(a.max()) for a in xs) + margin - x0
    height = max(float(a.max()) for a in ys) + margin - y0

    with plt.rc_context(_SVG_RC):
        # dpi=72：1 个数据单位 = 1 pt = SVG 中 1 px
        fig = plt.figure(figsize=(width / 72.0, height / 72.0), dpi=72)
        ax = fig.add_axes((0.0, 0.0, 1.0, 1.0))
        ax.set_xlim(0.0, width)
        ax.set_ylim(height, 0.0)
        ax.set_axis_off()
        for t in range(pred.frames):
            for parent, child in bones:
                ax.plot(
                    [px[t, parent] - x0, px[t, child] - x0],
                    [py[t, parent] - y0, py[t, child] - y0],
                    color="#555555", linewidth=0.8,
                )
            for j in range(pred.joints):
                ax.add_patch(Circle((px[t, j] - x0, py[t, j] - y0), radius=float(radii[t, j]),
                                    facecolor="#d62728", edgecolor="none", alpha=0.7))
                if truth is not None:
                    ax.add_patch(Circle((tx[t, j] - x0, ty[t, j] - y0), radius=R_MIN_PX,
                                        facecolor="none", edgecolor="#1f77b4", linewidth=0.6))
        path = _save_svg(fig, Path(out_path))
    logger.info("visualize.pointsize_written", path=str(path), frames=pred.frames, joints=pred.joints)
    return path


def _write_map_csv(umap: UncertaintyMap, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in umap.values:
            fh.write(",".join(f"{v:.{MAP_DECIMALS}f}" for v in row) + "\n")


def normalize_map(values: np.ndarray) -> np.ndarray:
    """min-max → [0, 255]；max == min 时全 0"""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _write_map_svg(umap: UncertaintyMap, path: Path) -> None:
    rows, cols = umap.values.shape
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.4 * cols + 2.0), max(3.0, 0.3 * rows + 1.5)), dpi=72)
        image = ax.imshow(umap.values, cmap="gray", aspect="auto", interpolation="nearest")
        ax.set_xlabel("joint")
        ax.set_ylabel("frame")
        ax.set_xticks(range(cols))
        ax.set_yticks(range(rows))
        ax.set_yticklabels([str(f) for f in umap.row_frames])
        fig.colorbar(image, ax=ax, label="mean variance (mm²)")
        _save_svg(fig, path)


def render_map(umap: UncertaintyMap, out_path: str | Path, format: MapFormat | str = MapFormat.CSV) -> Path:
    fmt = map_format_for(format)
    path = Path(out_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt is MapFormat.CSV:
            _write_map_csv(umap, path)
        elif fmt is MapFormat.PGM:
            Image.fromarray(normalize_map(umap.values)).save(path, format="PPM")
        else:
            _write_map_svg(umap, path)
    except OSError as exc:
        raise ArtifactIOError("cannot write uncertainty map", context={"path": str(path), "format": fmt.value}, cause=exc)
    logger.info("visualize.map_written", path=str(path), format=fmt.value)
    return path


def load_map_csv(path: str | Path, first_frame: int = 1) -> UncertaintyMap:
    file_path = Path(path)
    rows = []
    try:
        with open(file_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rows.append([float(v) for v in line.strip().split(",")])
                except ValueError as exc:
                    raise ParseError("map cell is not a number", line=line_no, cause=exc)
    except OSError as exc:
        raise ArtifactIOError("cannot read uncertainty map", context={"path": str(file_path)}, cause=exc)
    if not rows:
        raise ParseError("map file is empty", line=0, context={"path": str(file_path)})
    return UncertaintyMap(values=np.asarray(rows), row_frames=tuple(range(first_frame, first_frame + len(rows))))
